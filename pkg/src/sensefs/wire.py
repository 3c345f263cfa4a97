"""Styx-subset wire codec: message types, encoder/decoder, incremental framing.

Message format (all integers little-endian):

    frame   := size[4] type[1] tag[2] body
    string  := len[2] utf8-bytes[len]
    qid     := kind[1] version[4] path[8]
    stat    := statlen[2] name[string] qid[13] mode[4] length[8]
               owner[string] group[string] mtime[8]

The size field counts the whole frame, itself included.  Exchanges are
strictly paired: a client sends a T-message with a 16-bit tag and the
server answers with exactly one R-message carrying the same tag (Rerror
on failure).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

NOTAG = 0xFFFF
MAX_FRAME = 8192
MAX_WALK = 16
# Largest Rread/Twrite payload: frame minus size[4] type[1] tag[2] count[4]
# and the Twrite fid[4]+offset[8].
IOUNIT = MAX_FRAME - 23

TATTACH = 100
RATTACH = 101
TWALK = 102
RWALK = 103
TOPEN = 104
ROPEN = 105
TREAD = 106
RREAD = 107
TWRITE = 108
RWRITE = 109
TCLUNK = 110
RCLUNK = 111
TSTAT = 112
RSTAT = 113
RERROR = 127

OREAD = 0
OWRITE = 1
ORDWR = 2

QDIR = 0x80
QFILE = 0x00

DMDIR = 0x80000000


class WireError(Exception):
    """Raised on any encode/decode/framing violation."""


@dataclass(frozen=True)
class Qid:
    kind: int = QFILE
    version: int = 0
    path: int = 0

    @property
    def is_dir(self) -> bool:
        return bool(self.kind & QDIR)


@dataclass(frozen=True)
class Stat:
    name: str
    qid: Qid
    mode: int
    length: int = 0
    owner: str = ""
    group: str = ""
    mtime: int = 0


@dataclass(frozen=True)
class Tattach:
    tag: int
    fid: int
    uname: str
    aname: str = ""


@dataclass(frozen=True)
class Rattach:
    tag: int
    qid: Qid


@dataclass(frozen=True)
class Twalk:
    tag: int
    fid: int
    newfid: int
    names: tuple = ()


@dataclass(frozen=True)
class Rwalk:
    tag: int
    qids: tuple = ()


@dataclass(frozen=True)
class Topen:
    tag: int
    fid: int
    mode: int


@dataclass(frozen=True)
class Ropen:
    tag: int
    qid: Qid
    iounit: int = IOUNIT


@dataclass(frozen=True)
class Tread:
    tag: int
    fid: int
    offset: int
    count: int


@dataclass(frozen=True)
class Rread:
    tag: int
    data: bytes


@dataclass(frozen=True)
class Twrite:
    tag: int
    fid: int
    offset: int
    data: bytes


@dataclass(frozen=True)
class Rwrite:
    tag: int
    count: int


@dataclass(frozen=True)
class Tclunk:
    tag: int
    fid: int


@dataclass(frozen=True)
class Rclunk:
    tag: int


@dataclass(frozen=True)
class Tstat:
    tag: int
    fid: int


@dataclass(frozen=True)
class Rstat:
    tag: int
    stat: Stat


@dataclass(frozen=True)
class Rerror:
    tag: int
    ename: str


T_TYPES = (Tattach, Twalk, Topen, Tread, Twrite, Tclunk, Tstat)
R_TYPES = (Rattach, Rwalk, Ropen, Rread, Rwrite, Rclunk, Rstat, Rerror)

TYPE_CODES = {
    Tattach: TATTACH, Rattach: RATTACH,
    Twalk: TWALK, Rwalk: RWALK,
    Topen: TOPEN, Ropen: ROPEN,
    Tread: TREAD, Rread: RREAD,
    Twrite: TWRITE, Rwrite: RWRITE,
    Tclunk: TCLUNK, Rclunk: RCLUNK,
    Tstat: TSTAT, Rstat: RSTAT,
    Rerror: RERROR,
}

TYPE_NAMES = {code: cls.__name__ for cls, code in TYPE_CODES.items()}


def is_t_message(msg) -> bool:
    return isinstance(msg, T_TYPES)


def _pack_string(s: str) -> bytes:
    raw = s.encode("utf-8")
    if len(raw) > 0xFFFF:
        raise WireError("string too long (%d bytes)" % len(raw))
    return struct.pack("<H", len(raw)) + raw


def _pack_qid(q: Qid) -> bytes:
    return struct.pack("<BIQ", q.kind, q.version, q.path)


def pack_stat(st: Stat) -> bytes:
    body = (
        _pack_string(st.name)
        + _pack_qid(st.qid)
        + struct.pack("<IQ", st.mode, st.length)
        + _pack_string(st.owner)
        + _pack_string(st.group)
        + struct.pack("<Q", st.mtime)
    )
    return struct.pack("<H", len(body)) + body


def encode_message(msg) -> bytes:
    """Encode one message into a complete frame."""
    cls = type(msg)
    code = TYPE_CODES.get(cls)
    if code is None:
        raise WireError("not a protocol message: %r" % (msg,))
    if not 0 <= msg.tag <= 0xFFFF:
        raise WireError("tag out of range: %r" % (msg.tag,))
    if is_t_message(msg) and msg.tag == NOTAG:
        raise WireError("NOTAG on a T-message")

    if cls is Tattach:
        body = struct.pack("<I", msg.fid) + _pack_string(msg.uname) + _pack_string(msg.aname)
    elif cls is Rattach:
        body = _pack_qid(msg.qid)
    elif cls is Twalk:
        if len(msg.names) > MAX_WALK:
            raise WireError("walk of %d names exceeds %d" % (len(msg.names), MAX_WALK))
        body = struct.pack("<IIH", msg.fid, msg.newfid, len(msg.names))
        for name in msg.names:
            body += _pack_string(name)
    elif cls is Rwalk:
        if len(msg.qids) > MAX_WALK:
            raise WireError("too many qids in Rwalk")
        body = struct.pack("<H", len(msg.qids)) + b"".join(_pack_qid(q) for q in msg.qids)
    elif cls is Topen:
        if not 0 <= msg.mode <= ORDWR:
            raise WireError("bad open mode %r" % (msg.mode,))
        body = struct.pack("<IB", msg.fid, msg.mode)
    elif cls is Ropen:
        body = _pack_qid(msg.qid) + struct.pack("<I", msg.iounit)
    elif cls is Tread:
        body = struct.pack("<IQI", msg.fid, msg.offset, msg.count)
    elif cls is Rread:
        body = struct.pack("<I", len(msg.data)) + msg.data
    elif cls is Twrite:
        body = struct.pack("<IQI", msg.fid, msg.offset, len(msg.data)) + msg.data
    elif cls is Rwrite:
        body = struct.pack("<I", msg.count)
    elif cls in (Tclunk, Tstat):
        body = struct.pack("<I", msg.fid)
    elif cls is Rclunk:
        body = b""
    elif cls is Rstat:
        body = pack_stat(msg.stat)
    else:  # Rerror
        body = _pack_string(msg.ename)

    frame = struct.pack("<IBH", 7 + len(body), code, msg.tag) + body
    if len(frame) > MAX_FRAME:
        raise WireError("frame of %d bytes exceeds %d" % (len(frame), MAX_FRAME))
    return frame


class _Cursor:
    """Bounds-checked reader over one frame body."""

    def __init__(self, data: bytes, pos: int = 0):
        self.data = data
        self.pos = pos

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise WireError("truncated at offset %d" % self.pos)
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u8(self) -> int:
        return self.take(1)[0]

    def u16(self) -> int:
        return struct.unpack("<H", self.take(2))[0]

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]

    def string(self) -> str:
        n = self.u16()
        start = self.pos
        raw = self.take(n)
        try:
            return raw.decode("utf-8")
        except UnicodeDecodeError:
            raise WireError("bad utf-8 string at offset %d" % start)

    def qid(self) -> Qid:
        return Qid(self.u8(), self.u32(), self.u64())


def unpack_stat(cur: _Cursor) -> Stat:
    statlen = cur.u16()
    end = cur.pos + statlen
    if end > len(cur.data):
        raise WireError("truncated stat at offset %d" % cur.pos)
    name = cur.string()
    qid = cur.qid()
    mode = cur.u32()
    length = cur.u64()
    owner = cur.string()
    group = cur.string()
    mtime = cur.u64()
    if cur.pos != end:
        raise WireError("stat length mismatch at offset %d" % cur.pos)
    return Stat(name, qid, mode, length, owner, group, mtime)


def decode_stats(data: bytes) -> list:
    """Decode a directory-read payload: consecutive stat records."""
    cur = _Cursor(data)
    out = []
    while cur.pos < len(data):
        out.append(unpack_stat(cur))
    return out


def decode_message(frame: bytes):
    """Decode exactly one frame back into its message."""
    if len(frame) < 7:
        raise WireError("frame shorter than 7 bytes")
    size, code, tag = struct.unpack("<IBH", frame[:7])
    if size != len(frame):
        raise WireError("truncated: size field %d, got %d bytes" % (size, len(frame)))
    cur = _Cursor(frame, 7)

    if code == TATTACH:
        msg = Tattach(tag, cur.u32(), cur.string(), cur.string())
    elif code == RATTACH:
        msg = Rattach(tag, cur.qid())
    elif code == TWALK:
        fid, newfid, nwname = cur.u32(), cur.u32(), cur.u16()
        if nwname > MAX_WALK:
            raise WireError("walk of %d names exceeds %d" % (nwname, MAX_WALK))
        msg = Twalk(tag, fid, newfid, tuple(cur.string() for _ in range(nwname)))
    elif code == RWALK:
        nwqid = cur.u16()
        if nwqid > MAX_WALK:
            raise WireError("too many qids in Rwalk")
        msg = Rwalk(tag, tuple(cur.qid() for _ in range(nwqid)))
    elif code == TOPEN:
        fid, mode = cur.u32(), cur.u8()
        if mode > ORDWR:
            raise WireError("bad open mode %d" % mode)
        msg = Topen(tag, fid, mode)
    elif code == ROPEN:
        msg = Ropen(tag, cur.qid(), cur.u32())
    elif code == TREAD:
        msg = Tread(tag, cur.u32(), cur.u64(), cur.u32())
    elif code == RREAD:
        msg = Rread(tag, cur.take(cur.u32()))
    elif code == TWRITE:
        fid, offset, count = cur.u32(), cur.u64(), cur.u32()
        msg = Twrite(tag, fid, offset, cur.take(count))
    elif code == RWRITE:
        msg = Rwrite(tag, cur.u32())
    elif code == TCLUNK:
        msg = Tclunk(tag, cur.u32())
    elif code == RCLUNK:
        msg = Rclunk(tag)
    elif code == TSTAT:
        msg = Tstat(tag, cur.u32())
    elif code == RSTAT:
        msg = Rstat(tag, unpack_stat(cur))
    elif code == RERROR:
        msg = Rerror(tag, cur.string())
    else:
        raise WireError("unknown type %d at offset 4" % code)

    if cur.pos != len(frame):
        raise WireError("size mismatch: %d trailing bytes" % (len(frame) - cur.pos))
    if is_t_message(msg) and tag == NOTAG:
        raise WireError("NOTAG on a T-message")
    return msg


class FrameReader:
    """Incremental frame splitter; feed() bytes in, complete frames out.

    Single-consumer: one reader per byte stream.
    """

    def __init__(self):
        self._buf = bytearray()

    def feed(self, chunk: bytes) -> list:
        self._buf.extend(chunk)
        frames = []
        while True:
            if len(self._buf) < 4:
                break
            size = struct.unpack("<I", bytes(self._buf[:4]))[0]
            if size < 7:
                raise WireError("frame size %d below minimum 7" % size)
            if size > MAX_FRAME:
                raise WireError("frame size %d exceeds %d" % (size, MAX_FRAME))
            if len(self._buf) < size:
                break
            frames.append(bytes(self._buf[:size]))
            del self._buf[:size]
        return frames

    def close(self):
        if self._buf:
            raise WireError("stream ended mid-frame (%d buffered bytes)" % len(self._buf))

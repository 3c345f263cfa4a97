"""Client-side library: file operations over attached servers.

Callers see open/read/write/ls/stat on paths; the messaging underneath
(attach, walk, open, read, write, clunk and tag bookkeeping) is fully
concealed.  Works against two kinds of server reference:

    ("net", endpoint_id)  -- a simulated server reached over the wire
    ("local", Server)     -- an in-process fscore server (namespace views)

Synchronous calls drive the simulation clock forward until the reply
arrives; submit() issues a request without waiting, for callers that
want several outstanding at once.
"""

from __future__ import annotations

from . import wire
from .wire import (
    IOUNIT, OREAD, OWRITE,
    Tattach, Twalk, Topen, Tread, Twrite, Tclunk, Tstat,
    Rattach, Rwalk, Ropen, Rread, Rwrite, Rclunk, Rstat, Rerror,
)

CLIENT_TIMEOUT = 20000   # ticks a synchronous call will wait for its reply


class ClientError(Exception):
    def __init__(self, ename):
        super().__init__(ename)
        self.ename = ename


class FileClient:
    """One client identity: an endpoint on the network plus a fid space
    per attached server."""

    def __init__(self, net, eid, uname="admin", timeout=CLIENT_TIMEOUT):
        self.net = net
        self.eid = eid
        self.uname = uname
        self.timeout = timeout
        self._pending = {}          # tag -> callback
        self._next_tag = 0
        self._sessions = {}         # server key -> dict(root_fid, next_fid)
        net.register(eid, self._on_frame)

    # -- transport ---------------------------------------------------------

    def _on_frame(self, src, frame):
        try:
            msg = wire.decode_message(frame)
        except wire.WireError:
            return
        cb = self._pending.pop((src, msg.tag), None)
        if cb is not None:
            cb(msg)

    def _new_tag(self):
        self._next_tag = (self._next_tag + 1) % wire.NOTAG
        return self._next_tag

    def submit(self, ref, build, cb):
        """Issue one T-message without waiting; cb(R-message) later."""
        kind, target = ref
        tag = self._new_tag()
        msg = build(tag)
        if kind == "local":
            replies = []
            target.dispatch(self.eid, msg, replies.append)
            if not replies:
                raise ClientError("local server deferred unexpectedly")
            cb(replies[0])
        else:
            self._pending[(target, tag)] = cb
            self.net.send(self.eid, target, wire.encode_message(msg))

    def call(self, ref, build):
        """Send one T-message and run the clock until its reply arrives."""
        kind, target = ref
        if kind == "local":
            box = []
            self.submit(ref, build, box.append)
            msg = box[0]
        else:
            box = []
            self.submit(ref, build, box.append)
            deadline = self.net.now + self.timeout
            while not box:
                nxt = self.net.peek_time()
                if nxt is None or nxt > deadline:
                    raise ClientError("timeout")
                self.net.step()
            msg = box[0]
        if isinstance(msg, Rerror):
            raise ClientError(msg.ename)
        return msg

    # -- session / fid plumbing --------------------------------------------

    def _key(self, ref):
        kind, target = ref
        return (kind, target if kind == "net" else id(target))

    def _session(self, ref):
        key = self._key(ref)
        sess = self._sessions.get(key)
        if sess is None:
            self.call(ref, lambda t: Tattach(t, 0, self.uname, ""))
            sess = {"next_fid": 1}
            self._sessions[key] = sess
        return sess

    def _walk(self, ref, relpath):
        sess = self._session(ref)
        fid = sess["next_fid"]
        sess["next_fid"] += 1
        names = tuple(p for p in relpath.split("/") if p)
        r = self.call(ref, lambda t: Twalk(t, 0, fid, names))
        if len(r.qids) != len(names):
            raise ClientError("no such file")
        return fid, r.qids

    def _clunk(self, ref, fid):
        try:
            self.call(ref, lambda t: Tclunk(t, fid))
        except ClientError:
            pass

    # -- file operations ------------------------------------------------

    def open_path(self, ref, relpath, mode=OREAD):
        """Walk and open; returns a handle for read_at/submit_read/close."""
        fid, _ = self._walk(ref, relpath)
        try:
            r = self.call(ref, lambda t: Topen(t, fid, mode))
        except ClientError:
            self._clunk(ref, fid)
            raise
        return {"ref": ref, "fid": fid, "iounit": r.iounit}

    def read_at(self, handle, offset, count=None):
        count = count if count is not None else min(IOUNIT, handle["iounit"])
        r = self.call(handle["ref"],
                      lambda t: Tread(t, handle["fid"], offset, count))
        return r.data

    def submit_read(self, handle, offset, count, cb):
        """Fire one Tread without waiting; cb(Rread or Rerror)."""
        self.submit(handle["ref"],
                    lambda t: Tread(t, handle["fid"], offset, count), cb)

    def close(self, handle):
        self._clunk(handle["ref"], handle["fid"])

    def read(self, ref, relpath) -> bytes:
        handle = self.open_path(ref, relpath, OREAD)
        try:
            out = bytearray()
            while True:
                data = self.read_at(handle, len(out))
                if not data:
                    break
                out.extend(data)
            return bytes(out)
        finally:
            self.close(handle)

    def write(self, ref, relpath, data: bytes) -> int:
        handle = self.open_path(ref, relpath, OWRITE)
        try:
            r = self.call(handle["ref"],
                          lambda t: Twrite(t, handle["fid"], 0, data))
            return r.count
        finally:
            self.close(handle)

    def ls(self, ref, relpath) -> list:
        """Stat records of a directory's children, in server order."""
        handle = self.open_path(ref, relpath, OREAD)
        try:
            out = bytearray()
            while True:
                data = self.read_at(handle, len(out))
                if not data:
                    break
                out.extend(data)
            return wire.decode_stats(bytes(out))
        finally:
            self.close(handle)

    def stat(self, ref, relpath) -> wire.Stat:
        fid, _ = self._walk(ref, relpath)
        try:
            r = self.call(ref, lambda t: Tstat(t, fid))
            return r.stat
        finally:
            self._clunk(ref, fid)

"""Server-side framework: node trees, fid tables, permissions, dispatch.

Both the leaf device servers and the cluster-head multiplexers are built
on this module.  A server owns a tree of Nodes, tracks per-connection
sessions (fid tables), and turns each incoming T-message into exactly one
R-message with the same tag.  Handlers that cannot answer synchronously
return a Defer and complete later; the dispatch loop never blocks.
"""

from __future__ import annotations

import itertools

from . import wire
from .wire import (
    Qid, Stat, QDIR, QFILE, DMDIR, IOUNIT,
    OREAD, OWRITE, ORDWR,
    Rattach, Rwalk, Ropen, Rread, Rwrite, Rclunk, Rstat, Rerror,
    Tattach, Twalk, Topen, Tread, Twrite, Tclunk, Tstat,
)

# qid paths are allocated process-wide so distinct servers never collide
_qid_paths = itertools.count(1)

DEFAULT_MAX_FIDS = 64
DEFAULT_MAX_SESSIONS = 4


class FsError(Exception):
    """A file-system level failure; its message becomes the Rerror ename."""

    def __init__(self, ename: str):
        super().__init__(ename)
        self.ename = ename


class Defer:
    """A handler result that completes later.

    start(done) is called once by the dispatcher; the handler must
    eventually invoke done(result) exactly once, where result is the
    handler's normal return value or an FsError.
    """

    def __init__(self, start):
        self.start = start


class Node:
    """A named entry in a server tree: directory or file."""

    def __init__(self, name, mode, owner="admin", group="admin",
                 read=None, write=None, length=None, children_fn=None,
                 is_dir=False):
        if is_dir or mode & DMDIR:
            is_dir = True
            mode |= DMDIR
        if "/" in name or name in (".", ".."):
            raise ValueError("bad node name %r" % name)
        self.name = name
        self.mode = mode
        self.owner = owner
        self.group = group
        self.mtime = 0
        self._version = 0
        self._path = next(_qid_paths)
        self._is_dir = is_dir
        self._children = {} if is_dir else None
        self.children_fn = children_fn
        self.read_handler = read
        self.write_handler = write
        self.length_fn = length
        # set by muxfs on mirrored device nodes: (device_id, relpath)
        self.remote = None

    @property
    def is_dir(self) -> bool:
        return self._is_dir

    @property
    def qid(self) -> Qid:
        return Qid(QDIR if self._is_dir else QFILE, self._version, self._path)

    def bump_version(self):
        self._version += 1

    def add(self, child: "Node") -> "Node":
        if not self._is_dir:
            raise ValueError("%s is not a directory" % self.name)
        if child.name in self._children:
            raise ValueError("duplicate child %r" % child.name)
        self._children[child.name] = child
        return child

    def list_children(self):
        if not self._is_dir:
            raise FsError("not a directory")
        if self.children_fn is not None:
            return list(self.children_fn())
        return list(self._children.values())

    def lookup(self, name):
        for child in self.list_children():
            if child.name == name:
                return child
        return None

    def length(self) -> int:
        if self.length_fn is not None:
            return self.length_fn()
        return 0

    def stat(self) -> Stat:
        return Stat(self.name, self.qid, self.mode, self.length(),
                    self.owner, self.group, self.mtime)


def make_dir(name, mode=0o555, **kw) -> Node:
    return Node(name, mode, is_dir=True, **kw)


def make_file(name, mode=0o444, **kw) -> Node:
    return Node(name, mode, **kw)


class UserDb:
    """uname -> set of group names; everyone belongs to an own-name group."""

    def __init__(self, members=None):
        self._groups = {}
        for uname, groups in (members or {}).items():
            self.add(uname, *groups)

    def add(self, uname, *groups):
        self._groups.setdefault(uname, {uname}).update(groups)

    def groups_of(self, uname):
        return self._groups.get(uname, {uname})


DEFAULT_USERS = UserDb({"admin": {"admin"}, "guest": {"users"}, "mux": {"mux"}})


class _Fid:
    __slots__ = ("node", "uname", "open_mode", "dir_offset", "dir_index",
                 "remote_fid", "cache_data")

    def __init__(self, node, uname):
        self.node = node
        self.uname = uname
        self.open_mode = None      # None while closed, else OREAD/OWRITE/ORDWR
        self.dir_offset = 0        # next valid directory read offset
        self.dir_index = 0
        self.remote_fid = None     # device-side fid, used by muxfs
        self.cache_data = None     # pinned cache snapshot, used by muxfs


class Session:
    """Per-connection state: the fid table."""

    def __init__(self, conn_key, max_fids):
        self.conn_key = conn_key
        self.max_fids = max_fids
        self.fids = {}

    def get(self, fid) -> _Fid:
        ent = self.fids.get(fid)
        if ent is None:
            raise FsError("unknown fid")
        return ent

    def bind(self, fid, node, uname) -> _Fid:
        if len(self.fids) >= self.max_fids and fid not in self.fids:
            raise FsError("too many fids")
        ent = _Fid(node, uname)
        self.fids[fid] = ent
        return ent


class Server:
    """A file server: one tree, many connections, paired T/R dispatch."""

    def __init__(self, root: Node, users: UserDb = None, name: str = "srv",
                 max_sessions: int = DEFAULT_MAX_SESSIONS,
                 max_fids: int = DEFAULT_MAX_FIDS):
        assert root.is_dir
        self.root = root
        self.users = users or DEFAULT_USERS
        self.name = name
        self.max_sessions = max_sessions
        self.max_fids = max_fids
        self.sessions = {}

    # -- permission evaluation: owner bits, else group bits, else other --

    def _permits(self, node: Node, uname: str, want: int) -> bool:
        mode = node.mode
        if uname == node.owner:
            bits = (mode >> 6) & 7
        elif node.group in self.users.groups_of(uname):
            bits = (mode >> 3) & 7
        else:
            bits = mode & 7
        return (bits & want) == want

    def check_open_perm(self, node: Node, uname: str, mode: int):
        if node.is_dir and mode != OREAD:
            raise FsError("is a directory")
        want = {OREAD: 4, OWRITE: 2, ORDWR: 6}[mode]
        if not self._permits(node, uname, want):
            raise FsError("permission denied")

    # -- dispatch -----------------------------------------------------

    def dispatch(self, conn_key, msg, reply):
        """Handle one T-message; reply(r_message) is invoked exactly once,
        immediately or later (deferred handlers)."""
        tag = msg.tag
        try:
            result = self._handle(conn_key, msg)
        except FsError as e:
            reply(Rerror(tag, e.ename))
            return
        if isinstance(result, Defer):
            def done(outcome, _tag=tag, _msg=msg):
                if isinstance(outcome, FsError):
                    reply(Rerror(_tag, outcome.ename))
                else:
                    reply(self._wrap(_msg, outcome))
            result.start(done)
        else:
            reply(self._wrap(msg, result))

    def _wrap(self, msg, result):
        tag = msg.tag
        if isinstance(msg, Tattach):
            return Rattach(tag, result)
        if isinstance(msg, Twalk):
            return Rwalk(tag, tuple(result))
        if isinstance(msg, Topen):
            return Ropen(tag, result, IOUNIT)
        if isinstance(msg, Tread):
            return Rread(tag, result)
        if isinstance(msg, Twrite):
            return Rwrite(tag, result)
        if isinstance(msg, Tclunk):
            return Rclunk(tag)
        if isinstance(msg, Tstat):
            return Rstat(tag, result)
        raise FsError("not a T-message")

    def _handle(self, conn_key, msg):
        if isinstance(msg, Tattach):
            return self.t_attach(conn_key, msg)
        session = self.sessions.get(conn_key)
        if session is None:
            raise FsError("no session")
        if isinstance(msg, Twalk):
            return self.t_walk(session, msg)
        if isinstance(msg, Topen):
            return self.t_open(session, msg)
        if isinstance(msg, Tread):
            return self.t_read(session, msg)
        if isinstance(msg, Twrite):
            return self.t_write(session, msg)
        if isinstance(msg, Tclunk):
            return self.t_clunk(session, msg)
        if isinstance(msg, Tstat):
            return self.t_stat(session, msg)
        raise FsError("unknown message")

    # -- per-message handlers (overridable by subclasses) -------------

    def t_attach(self, conn_key, msg: Tattach):
        if msg.aname not in ("",):
            raise FsError("no such tree")
        session = self.sessions.get(conn_key)
        if session is None:
            if len(self.sessions) >= self.max_sessions:
                raise FsError("too many sessions")
            session = Session(conn_key, self.max_fids)
            self.sessions[conn_key] = session
        if msg.fid in session.fids:
            raise FsError("fid in use")
        session.bind(msg.fid, self.root, msg.uname)
        return self.root.qid

    def t_walk(self, session, msg: Twalk):
        ent = session.get(msg.fid)
        if ent.open_mode is not None:
            raise FsError("fid is open")
        if msg.newfid != msg.fid and msg.newfid in session.fids:
            raise FsError("newfid in use")
        node = ent.node
        qids = []
        for i, name in enumerate(msg.names):
            if not node.is_dir:
                break
            child = node.lookup(name)
            if child is None:
                if i == 0:
                    raise FsError("no such file")
                break
            node = child
            qids.append(node.qid)
        if len(qids) == len(msg.names):
            session.bind(msg.newfid, node, ent.uname)
        return qids

    def t_open(self, session, msg: Topen):
        ent = session.get(msg.fid)
        if ent.open_mode is not None:
            raise FsError("fid already open")
        self.check_open_perm(ent.node, ent.uname, msg.mode)
        ent.open_mode = msg.mode
        ent.dir_offset = 0
        ent.dir_index = 0
        return ent.node.qid

    def t_read(self, session, msg: Tread):
        ent = session.get(msg.fid)
        if ent.open_mode not in (OREAD, ORDWR):
            raise FsError("fid not open for reading")
        count = min(msg.count, IOUNIT)
        node = ent.node
        if node.is_dir:
            return self._read_dir(ent, msg.offset, count)
        if node.read_handler is None:
            raise FsError("not readable")
        return node.read_handler(msg.offset, count)

    def _read_dir(self, ent, offset, count):
        if offset == 0:
            ent.dir_offset = 0
            ent.dir_index = 0
        elif offset != ent.dir_offset:
            raise FsError("bad directory offset")
        children = ent.node.list_children()
        out = bytearray()
        idx = ent.dir_index
        while idx < len(children):
            rec = wire.pack_stat(children[idx].stat())
            if len(out) + len(rec) > count:
                break
            out.extend(rec)
            idx += 1
        ent.dir_index = idx
        ent.dir_offset = offset + len(out)
        return bytes(out)

    def t_write(self, session, msg: Twrite):
        ent = session.get(msg.fid)
        if ent.open_mode not in (OWRITE, ORDWR):
            raise FsError("fid not open for writing")
        node = ent.node
        if node.is_dir or node.write_handler is None:
            raise FsError("not writable")
        result = node.write_handler(msg.offset, msg.data)
        if not isinstance(result, Defer):
            node.bump_version()
        return result

    def t_clunk(self, session, msg: Tclunk):
        if msg.fid not in session.fids:
            raise FsError("unknown fid")
        del session.fids[msg.fid]
        return None

    def t_stat(self, session, msg: Tstat):
        return session.get(msg.fid).node.stat()

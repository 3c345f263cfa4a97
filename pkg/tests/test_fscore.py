"""Server framework tests: sessions, walks, permissions, fid discipline."""

import pytest
from hypothesis import given, settings, strategies as st

from sensefs import wire
from sensefs.fscore import (
    FsError, Node, Server, UserDb, make_dir, make_file,
)
from sensefs.wire import (
    OREAD, OWRITE, ORDWR, QDIR, DMDIR,
    Tattach, Twalk, Topen, Tread, Twrite, Tclunk, Tstat,
    Rattach, Rwalk, Ropen, Rread, Rwrite, Rclunk, Rstat, Rerror,
)

USERS = UserDb({"admin": {"admin"}, "guest": {"users"}})


def build_server(max_sessions=4, max_fids=64):
    root = make_dir("root")
    sub = root.add(make_dir("sub"))
    store = {"text": b"hello\n", "writes": []}
    sub.add(make_file("readme", 0o444,
                      read=lambda off, cnt: store["text"][off:off + cnt]))

    def sink(off, data):
        store["writes"].append((off, data))
        return len(data)

    sub.add(make_file("ctl", 0o644, write=sink))
    root.add(make_file("open", 0o666, read=lambda off, cnt: b"",
                       write=lambda off, data: len(data)))
    return Server(root, USERS, max_sessions=max_sessions, max_fids=max_fids), store


class Conn:
    """Synchronous harness around one server connection."""

    def __init__(self, server, key="c0"):
        self.server = server
        self.key = key
        self._tag = 0

    def rpc(self, build):
        self._tag += 1
        box = []
        self.server.dispatch(self.key, build(self._tag), box.append)
        assert len(box) == 1, "dispatch must reply exactly once"
        assert box[0].tag == self._tag, "reply tag must echo the request tag"
        return box[0]

    def ok(self, build, rtype):
        r = self.rpc(build)
        assert isinstance(r, rtype), r
        return r

    def err(self, build, ename):
        r = self.rpc(build)
        assert isinstance(r, Rerror), r
        assert r.ename == ename
        return r


def test_attach_returns_directory_qid():
    server, _ = build_server()
    conn = Conn(server)
    r = conn.ok(lambda t: Tattach(t, 0, "admin", ""), Rattach)
    assert r.qid.kind == QDIR


def test_attach_fid_in_use():
    server, _ = build_server()
    conn = Conn(server)
    conn.ok(lambda t: Tattach(t, 0, "admin", ""), Rattach)
    conn.err(lambda t: Tattach(t, 0, "admin", ""), "fid in use")


def test_attach_unknown_tree():
    server, _ = build_server()
    conn = Conn(server)
    conn.err(lambda t: Tattach(t, 0, "admin", "other"), "no such tree")


def test_walk_multi_element():
    server, _ = build_server()
    conn = Conn(server)
    conn.ok(lambda t: Tattach(t, 0, "admin", ""), Rattach)
    r = conn.ok(lambda t: Twalk(t, 0, 1, ("sub", "readme")), Rwalk)
    assert len(r.qids) == 2
    assert r.qids[0].kind == QDIR and r.qids[1].kind == 0


def test_walk_identity():
    server, _ = build_server()
    conn = Conn(server)
    conn.ok(lambda t: Tattach(t, 0, "admin", ""), Rattach)
    r = conn.ok(lambda t: Twalk(t, 0, 1, ()), Rwalk)
    assert r.qids == ()
    # newfid is bound and usable
    conn.ok(lambda t: Topen(t, 1, OREAD), Ropen)


def test_walk_first_element_missing():
    server, _ = build_server()
    conn = Conn(server)
    conn.ok(lambda t: Tattach(t, 0, "admin", ""), Rattach)
    conn.err(lambda t: Twalk(t, 0, 1, ("nope",)), "no such file")
    # newfid stays unbound
    conn.err(lambda t: Topen(t, 1, OREAD), "unknown fid")


def test_walk_partial_leaves_newfid_unbound():
    server, _ = build_server()
    conn = Conn(server)
    conn.ok(lambda t: Tattach(t, 0, "admin", ""), Rattach)
    r = conn.ok(lambda t: Twalk(t, 0, 1, ("sub", "missing")), Rwalk)
    assert len(r.qids) == 1
    conn.err(lambda t: Topen(t, 1, OREAD), "unknown fid")


def test_walk_through_file_stops():
    server, _ = build_server()
    conn = Conn(server)
    conn.ok(lambda t: Tattach(t, 0, "admin", ""), Rattach)
    r = conn.ok(lambda t: Twalk(t, 0, 1, ("sub", "readme", "deeper")), Rwalk)
    assert len(r.qids) == 2


def test_walk_on_open_fid_rejected():
    server, _ = build_server()
    conn = Conn(server)
    conn.ok(lambda t: Tattach(t, 0, "admin", ""), Rattach)
    conn.ok(lambda t: Topen(t, 0, OREAD), Ropen)
    conn.err(lambda t: Twalk(t, 0, 1, ()), "fid is open")


def test_newfid_in_use():
    server, _ = build_server()
    conn = Conn(server)
    conn.ok(lambda t: Tattach(t, 0, "admin", ""), Rattach)
    conn.ok(lambda t: Twalk(t, 0, 1, ()), Rwalk)
    conn.err(lambda t: Twalk(t, 0, 1, ("sub",)), "newfid in use")


def walk_open(conn, names, mode=OREAD, fid=9):
    conn.ok(lambda t: Twalk(t, 0, fid, tuple(names)), Rwalk)
    conn.ok(lambda t: Topen(t, fid, mode), Ropen)
    return fid


def test_read_write_round_trip():
    server, store = build_server()
    conn = Conn(server)
    conn.ok(lambda t: Tattach(t, 0, "admin", ""), Rattach)
    fid = walk_open(conn, ["sub", "readme"])
    r = conn.ok(lambda t: Tread(t, fid, 0, 100), Rread)
    assert r.data == b"hello\n"
    assert conn.ok(lambda t: Tread(t, fid, 6, 100), Rread).data == b""
    wfid = walk_open(conn, ["sub", "ctl"], OWRITE, fid=10)
    assert conn.ok(lambda t: Twrite(t, wfid, 0, b"go"), Rwrite).count == 2
    assert store["writes"] == [(0, b"go")]


def test_read_requires_open():
    server, _ = build_server()
    conn = Conn(server)
    conn.ok(lambda t: Tattach(t, 0, "admin", ""), Rattach)
    conn.ok(lambda t: Twalk(t, 0, 1, ("sub", "readme")), Rwalk)
    conn.err(lambda t: Tread(t, 1, 0, 10), "fid not open for reading")


def test_write_requires_write_mode():
    server, _ = build_server()
    conn = Conn(server)
    conn.ok(lambda t: Tattach(t, 0, "admin", ""), Rattach)
    fid = walk_open(conn, ["sub", "ctl"], OREAD)
    conn.err(lambda t: Twrite(t, fid, 0, b"x"), "fid not open for writing")


def test_write_without_handler_is_not_writable():
    root = make_dir("root")
    root.add(make_file("ro", 0o666, read=lambda off, cnt: b""))
    server = Server(root, USERS)
    conn = Conn(server)
    conn.ok(lambda t: Tattach(t, 0, "admin", ""), Rattach)
    fid = walk_open(conn, ["ro"], ORDWR)
    conn.err(lambda t: Twrite(t, fid, 0, b"x"), "not writable")


def test_directory_read_lists_children_in_order():
    server, _ = build_server()
    conn = Conn(server)
    conn.ok(lambda t: Tattach(t, 0, "admin", ""), Rattach)
    fid = walk_open(conn, [])
    r = conn.ok(lambda t: Tread(t, fid, 0, 8169), Rread)
    names = [s.name for s in wire.decode_stats(r.data)]
    assert names == ["sub", "open"]


def test_directory_read_offset_contract():
    server, _ = build_server()
    conn = Conn(server)
    conn.ok(lambda t: Tattach(t, 0, "admin", ""), Rattach)
    fid = walk_open(conn, [])
    full = conn.ok(lambda t: Tread(t, fid, 0, 8169), Rread).data
    recs = []
    # re-read in minimal chunks: each read must start at the previous end
    conn.ok(lambda t: Tclunk(t, fid), Rclunk)
    fid = walk_open(conn, [])
    offset = 0
    while True:
        r = conn.ok(lambda t, o=offset: Tread(t, fid, o, 70), Rread)
        if not r.data:
            break
        recs.append(r.data)
        offset += len(r.data)
    assert b"".join(recs) == full
    conn.err(lambda t: Tread(t, fid, 5, 70), "bad directory offset")


def test_open_directory_for_write():
    server, _ = build_server()
    conn = Conn(server)
    conn.ok(lambda t: Tattach(t, 0, "admin", ""), Rattach)
    conn.err(lambda t: Topen(t, 0, OWRITE), "is a directory")


def test_double_open():
    server, _ = build_server()
    conn = Conn(server)
    conn.ok(lambda t: Tattach(t, 0, "admin", ""), Rattach)
    conn.ok(lambda t: Topen(t, 0, OREAD), Ropen)
    conn.err(lambda t: Topen(t, 0, OREAD), "fid already open")


def test_permissions_owner_group_other():
    root = make_dir("root")
    root.add(make_file("f", 0o640, owner="admin", group="admin",
                       read=lambda off, cnt: b"x"))
    server = Server(root, USERS)
    admin, guest = Conn(server, "a"), Conn(server, "g")
    admin.ok(lambda t: Tattach(t, 0, "admin", ""), Rattach)
    guest.ok(lambda t: Tattach(t, 0, "guest", ""), Rattach)
    # owner: rw-; group (admin only): r--; other: ---
    admin.ok(lambda t: Twalk(t, 0, 1, ("f",)), Rwalk)
    admin.ok(lambda t: Topen(t, 1, ORDWR), Ropen)
    guest.ok(lambda t: Twalk(t, 0, 1, ("f",)), Rwalk)
    guest.err(lambda t: Topen(t, 1, OREAD), "permission denied")


def test_guest_write_to_admin_control_denied():
    server, _ = build_server()
    conn = Conn(server, "guest-conn")
    conn.ok(lambda t: Tattach(t, 0, "guest", ""), Rattach)
    conn.ok(lambda t: Twalk(t, 0, 1, ("sub", "ctl")), Rwalk)
    conn.err(lambda t: Topen(t, 1, OWRITE), "permission denied")
    # read of a world-readable file succeeds
    conn.ok(lambda t: Twalk(t, 0, 2, ("sub", "readme")), Rwalk)
    conn.ok(lambda t: Topen(t, 2, OREAD), Ropen)


def test_clunk_releases_fid():
    server, _ = build_server()
    conn = Conn(server)
    conn.ok(lambda t: Tattach(t, 0, "admin", ""), Rattach)
    conn.ok(lambda t: Twalk(t, 0, 1, ("sub",)), Rwalk)
    conn.ok(lambda t: Tclunk(t, 1), Rclunk)
    conn.err(lambda t: Topen(t, 1, OREAD), "unknown fid")
    conn.err(lambda t: Tclunk(t, 1), "unknown fid")
    # fid number is reusable after clunk
    conn.ok(lambda t: Twalk(t, 0, 1, ()), Rwalk)


def test_too_many_fids():
    server, _ = build_server(max_fids=4)
    conn = Conn(server)
    conn.ok(lambda t: Tattach(t, 0, "admin", ""), Rattach)
    for fid in (1, 2, 3):
        conn.ok(lambda t, f=fid: Twalk(t, 0, f, ()), Rwalk)
    conn.err(lambda t: Twalk(t, 0, 4, ()), "too many fids")


def test_too_many_sessions():
    server, _ = build_server(max_sessions=2)
    for key in ("c1", "c2"):
        Conn(server, key).ok(lambda t: Tattach(t, 0, "admin", ""), Rattach)
    Conn(server, "c3").err(lambda t: Tattach(t, 0, "admin", ""),
                           "too many sessions")


def test_sessions_are_isolated():
    server, _ = build_server()
    c1, c2 = Conn(server, "c1"), Conn(server, "c2")
    c1.ok(lambda t: Tattach(t, 0, "admin", ""), Rattach)
    c2.ok(lambda t: Tattach(t, 0, "admin", ""), Rattach)
    c1.ok(lambda t: Twalk(t, 0, 1, ("sub",)), Rwalk)
    c2.err(lambda t: Topen(t, 1, OREAD), "unknown fid")


def test_stat():
    server, _ = build_server()
    conn = Conn(server)
    conn.ok(lambda t: Tattach(t, 0, "admin", ""), Rattach)
    r = conn.ok(lambda t: Tstat(t, 0), Rstat)
    assert r.stat.mode & DMDIR
    assert r.stat.name == "root"
    conn.ok(lambda t: Twalk(t, 0, 1, ("sub", "readme")), Rwalk)
    st_ = conn.ok(lambda t: Tstat(t, 1), Rstat).stat
    assert st_.mode == 0o444 and not st_.qid.is_dir


def test_version_bumps_on_write():
    server, _ = build_server()
    conn = Conn(server)
    conn.ok(lambda t: Tattach(t, 0, "admin", ""), Rattach)
    fid = walk_open(conn, ["sub", "ctl"], OWRITE)
    before = conn.ok(lambda t: Tstat(t, fid), Rstat).stat.qid.version
    conn.ok(lambda t: Twrite(t, fid, 0, b"x"), Rwrite)
    after = conn.ok(lambda t: Tstat(t, fid), Rstat).stat.qid.version
    assert after == before + 1


def test_distinct_trees_have_disjoint_qid_paths():
    s1, _ = build_server()
    s2, _ = build_server()

    def paths(node, acc):
        acc.add(node.qid.path)
        if node.is_dir:
            for child in node.list_children():
                paths(child, acc)
        return acc

    assert paths(s1.root, set()).isdisjoint(paths(s2.root, set()))


def test_bad_node_names_rejected():
    for name in ("a/b", ".", ".."):
        with pytest.raises(ValueError):
            Node(name, 0o444)
    with pytest.raises(ValueError):
        d = make_dir("d")
        d.add(make_file("x"))
        d.add(make_file("x"))


@settings(max_examples=50)
@given(st.lists(st.sampled_from(["walk", "clunk", "open"]), max_size=30),
       st.data())
def test_fid_table_never_exceeds_bound(ops, data):
    server, _ = build_server(max_fids=8)
    conn = Conn(server)
    conn.rpc(lambda t: Tattach(t, 0, "admin", ""))
    session = server.sessions["c0"]
    live = {0}
    for op in ops:
        if op == "walk":
            fid = data.draw(st.integers(1, 12))
            conn.rpc(lambda t, f=fid: Twalk(t, 0, f, ()))
        elif op == "clunk" and live:
            fid = data.draw(st.sampled_from(sorted(live)))
            conn.rpc(lambda t, f=fid: Tclunk(t, f))
        live = set(session.fids)
        assert len(session.fids) <= 8

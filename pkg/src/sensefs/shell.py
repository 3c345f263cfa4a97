"""Interactive shell and script runner over a running simulation.

The shell is the human-facing client: mount/ls/cat/write against any
server in the simulation, plus view construction, query planning and
alerting.  It drives the virtual clock explicitly (`tick`), so nothing
progresses between commands.  Scripts replay command sequences with
expected-output blocks for regression runs.
"""

from __future__ import annotations

import argparse
import sys

from . import views
from .client import ClientError
from .fscore import FsError
from .scenario import ScenarioError, load_scenario_file
from .views import (
    NamespaceTable, PlanError, dir_names, execute_plan, plan_query, raise_alert,
)
from .wire import DMDIR

PROMPT = "sensefs> "


class CommandError(Exception):
    pass


def _mode_text(mode: int) -> str:
    out = ["d" if mode & DMDIR else "-"]
    for shift in (6, 3, 0):
        bits = (mode >> shift) & 7
        out.append("r" if bits & 4 else "-")
        out.append("w" if bits & 2 else "-")
        out.append("x" if bits & 1 else "-")
    return "".join(out)


class Shell:
    def __init__(self, sim, user="admin"):
        self.sim = sim
        self.client = sim.new_client(user)
        self.table = NamespaceTable()
        self.cwd = "/"
        self.user = user
        self.history = []

    # -- paths ---------------------------------------------------------

    def _abspath(self, path: str) -> str:
        if not path.startswith("/"):
            path = self.cwd.rstrip("/") + "/" + path
        parts = []
        for p in path.split("/"):
            if not p or p == ".":
                continue
            if p == "..":
                if parts:
                    parts.pop()
            else:
                parts.append(p)
        return "/" + "/".join(parts)

    # -- command dispatch ------------------------------------------------

    def execute(self, line: str) -> str:
        line = line.strip()
        if not line or line.startswith("#"):
            return ""
        self.history.append(line)
        parts = line.split()
        cmd, args = parts[0], parts[1:]
        handler = getattr(self, "cmd_" + cmd.replace("-", "_"), None)
        if handler is None:
            raise CommandError("unknown command %r" % cmd)
        return handler(args) or ""

    def cmd_help(self, args):
        return ("commands: mount ls cd pwd cat write stat groups view plan "
                "alert tick seed log help exit")

    def cmd_mount(self, args):
        if len(args) != 2:
            raise CommandError("usage: mount <server> <path>")
        server, path = args[0], self._abspath(args[1])
        name = server[5:] if server.startswith("/dev/") else server
        if name == "network":
            for cluster, head in self.sim.cfg.clusters.items():
                self.table.mount("%s/%s" % (path, cluster), ("net", head))
            return ""
        if name in self.sim.net.handlers:
            self.table.mount(path, ("net", name))
            return ""
        raise CommandError("no such server %r" % server)

    def cmd_ls(self, args):
        long = "-l" in args
        args = [a for a in args if a != "-l"]
        path = self._abspath(args[0]) if args else self.cwd
        if not long:
            return "\n".join(dir_names(self.client, self.table, path))
        lines = []
        try:
            ref, rel = self.table.resolve(path)
            stats = self.client.ls(ref, rel)
        except ClientError:
            stats = []
        for st in stats:
            lines.append("%s %s %d %s" % (_mode_text(st.mode), st.owner, st.length, st.name))
        for name in self.table.mount_children(path):
            if not any(l.endswith(" " + name) for l in lines):
                lines.append("dr-xr-xr-x - 0 %s" % name)
        return "\n".join(lines)

    def cmd_cd(self, args):
        path = self._abspath(args[0]) if args else "/"
        if path != "/" and not self.table.covers(path):
            raise CommandError("no such directory %s" % path)
        self.cwd = path
        return ""

    def cmd_pwd(self, args):
        return self.cwd

    def cmd_cat(self, args):
        if not args:
            raise CommandError("usage: cat <path>")
        ref, rel = self.table.resolve(self._abspath(args[0]))
        return self.client.read(ref, rel).decode(errors="replace").rstrip("\n")

    def cmd_write(self, args):
        if len(args) < 2:
            raise CommandError("usage: write <path> <text>")
        ref, rel = self.table.resolve(self._abspath(args[0]))
        self.client.write(ref, rel, " ".join(args[1:]).encode())
        return ""

    def cmd_stat(self, args):
        if not args:
            raise CommandError("usage: stat <path>")
        ref, rel = self.table.resolve(self._abspath(args[0]))
        st = self.client.stat(ref, rel)
        return "%s %s %s %d %s" % (st.name, _mode_text(st.mode), st.owner,
                                   st.length, st.group)

    def cmd_groups(self, args):
        if not args:
            raise CommandError("usage: groups <cluster>")
        base = self._abspath("/network/%s/groups" % args[0])
        lines = []
        for group in dir_names(self.client, self.table, base):
            members = dir_names(self.client, self.table, base + "/" + group)
            lines.append("%s: %s" % (group, " ".join(members)))
        return "\n".join(lines)

    def cmd_view(self, args):
        if len(args) < 2 or args[0] != "build":
            raise CommandError("usage: view build <structural|location|logical|resource>")
        kind = args[1]
        cfg = self.sim.cfg
        if kind == "structural":
            return ""    # the structural view is the mount itself
        if kind == "location":
            cell = float(args[2]) if len(args) > 2 else cfg.view_cell
            server = views.build_location_view(
                self.client, self.table, cfg.geo, cfg.regions, cell)
            self.table.mount("/location", ("local", server))
        elif kind == "logical":
            tag = args[2] if len(args) > 2 else cfg.view_tag
            server = views.build_logical_view(self.client, self.table, tag)
            self.table.mount("/data", ("local", server))
        elif kind == "resource":
            low = float(args[2]) if len(args) > 2 else cfg.view_low
            high = float(args[3]) if len(args) > 3 else cfg.view_high
            server = views.build_resource_view(self.client, self.table, low, high)
            self.table.mount("/resource", ("local", server))
        else:
            raise CommandError("unknown view kind %r" % kind)
        return ""

    def cmd_plan(self, args):
        if len(args) != 4:
            raise CommandError("usage: plan <region> <coverage> <aggregation> <rate>")
        region, coverage, agg, rate = args[0], int(args[1]), args[2], int(args[3])
        cfg = self.sim.cfg
        plan = plan_query(self.client, self.table, cfg.regions, region, coverage,
                          aggregation=agg, rate=rate,
                          low_j=cfg.view_low, high_j=cfg.view_high)
        execute_plan(self.client, self.table, plan)
        return plan.render().rstrip("\n")

    def cmd_alert(self, args):
        if not args:
            raise CommandError("usage: alert <text>")
        delivered, failures = raise_alert(self.client, self.table, " ".join(args))
        out = "delivered %d" % delivered
        for name, why in failures:
            out += "\nfailed %s: %s" % (name, why)
        return out

    def cmd_tick(self, args):
        if not args:
            raise CommandError("usage: tick <n>")
        self.sim.net.run_until(self.sim.net.now + int(args[0]))
        return ""

    def cmd_seed(self, args):
        return str(self.sim.cfg.seed)

    def cmd_log(self, args):
        if args:
            self.sim.net.log.write(args[0])
            return ""
        return self.sim.net.log.text().rstrip("\n")

    def cmd_exit(self, args):
        raise EOFError

    def run_line(self, line: str):
        """Execute one line; returns (status, output text)."""
        try:
            return 0, self.execute(line)
        except (ClientError, FsError) as e:
            return 1, "error: %s" % (e.ename,)
        except (CommandError, PlanError, ValueError) as e:
            return 1, "error: %s" % (e,)


def run_script(shell: Shell, text: str, out=None):
    """Replay a script; returns (exit code, report text)."""
    lines = text.splitlines()
    failures = []
    i = 0
    while i < len(lines):
        raw = lines[i].rstrip()
        i += 1
        if not raw or raw.startswith("#"):
            continue
        if not raw.startswith(">"):
            failures.append("line %d: expected '> command', got %r" % (i, raw))
            break
        command = raw[1:].strip()
        lineno = i
        expected = []
        # comments end at the first command; inside an expected block a
        # leading '#' is literal output (aggregate trailers look like that)
        while i < len(lines) and lines[i].strip() and not lines[i].startswith(">"):
            expected.append(lines[i].rstrip())
            i += 1
        status, output = shell.run_line(command)
        if out is not None:
            out.write("%s%s\n" % (PROMPT, command))
            if output:
                out.write(output + "\n")
        got = [l.rstrip() for l in output.splitlines()] if output else []
        if expected and got != expected:
            failures.append("line %d: `%s`\n  expected: %r\n  got:      %r"
                            % (lineno, command, expected, got))
        elif not expected and status != 0:
            failures.append("line %d: `%s` failed: %s" % (lineno, command, output))
    if failures:
        return 2, "FAIL\n" + "\n".join(failures)
    return 0, "PASS"


def repl(shell: Shell, stdin=None, stdout=None):
    stdin = stdin or sys.stdin
    stdout = stdout or sys.stdout
    while True:
        stdout.write(PROMPT)
        stdout.flush()
        line = stdin.readline()
        if not line:
            break
        try:
            status, output = shell.run_line(line)
        except EOFError:
            break
        if output:
            stdout.write(output + "\n")


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="sensefs",
        description="File-system shell over a simulated sensor network.")
    parser.add_argument("--scenario", required=True, help="scenario file (*.scn)")
    parser.add_argument("--seed", type=int, default=None, help="RNG seed override")
    parser.add_argument("--script", help="script to replay instead of the REPL")
    parser.add_argument("--log", help="write the event log to this file on exit")
    parser.add_argument("--user", default="admin")
    args = parser.parse_args(argv)

    try:
        sim = load_scenario_file(args.scenario, seed=args.seed)
    except (ScenarioError, OSError) as e:
        print("error: %s" % e, file=sys.stderr)
        return 1
    sim.start()
    shell = Shell(sim, user=args.user)

    code = 0
    if args.script:
        with open(args.script) as fh:
            code, report = run_script(shell, fh.read(), out=sys.stdout)
        print(report)
    else:
        repl(shell)
    if args.log:
        sim.net.log.write(args.log)
    return code


if __name__ == "__main__":
    sys.exit(main())

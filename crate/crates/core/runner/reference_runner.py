#!/usr/bin/env python3
"""Reference rule worker.

Speaks the newline-delimited JSON protocol used by the cyclebench engine:
a handshake line, then exactly one response line per request line.
Requests: {id, op, source, input | inputs, limits}; ops are forward,
inverse, cycle, metrics and ping.

This worker keeps rule code out of the engine process and applies per-request
wall-clock and address-space limits. It is not a security boundary.
"""

import ast
import builtins
import copy
import io
import json
import resource
import signal
import sys
import time
import traceback

PROTOCOL_VERSION = 1
TRACEBACK_LIMIT = 4096
FORWARD = "transform_grid"
INVERSE = "inverse_transform_grid"

DEFAULT_LIMITS = {"wall_clock_ms": 2000, "memory_mb": 256, "output_bytes_max": 1 << 20}

ALLOWED_MODULES = {
    "bisect", "collections", "copy", "functools", "heapq", "itertools", "json",
    "math", "random", "re", "string", "typing", "unicodedata",
}

ALLOWED_BUILTINS = [
    "abs", "all", "any", "ascii", "bin", "bool", "bytes", "callable", "chr",
    "dict", "divmod", "enumerate", "filter", "float", "format", "frozenset",
    "getattr", "hasattr", "hash", "hex", "int", "isinstance", "issubclass",
    "iter", "len", "list", "map", "max", "min", "next", "object", "oct", "ord",
    "pow", "print", "range", "repr", "reversed", "round", "set", "slice",
    "sorted", "str", "sum", "super", "tuple", "type", "zip",
    "ArithmeticError", "AssertionError", "AttributeError", "Exception",
    "IndexError", "KeyError", "LookupError", "NotImplementedError",
    "RuntimeError", "StopIteration", "TypeError", "ValueError",
    "ZeroDivisionError", "__build_class__",
]

MUTATING_METHODS = {
    "append", "extend", "insert", "pop", "remove", "clear", "sort", "reverse",
    "update", "add", "discard", "setdefault", "popitem",
}


class WallClockExceeded(BaseException):
    pass


def _on_alarm(signum, frame):
    raise WallClockExceeded()


def _guarded_import(name, globals=None, locals=None, fromlist=(), level=0):
    if name.split(".")[0] not in ALLOWED_MODULES:
        raise ImportError("import of module '%s' is not allowed" % name)
    return __import__(name, globals, locals, fromlist, level)


def _fresh_namespace():
    allowed = {n: getattr(builtins, n) for n in ALLOWED_BUILTINS if hasattr(builtins, n)}
    allowed["__import__"] = _guarded_import
    return {"__builtins__": allowed, "__name__": "rule"}


def canonical(value):
    return json.dumps(value, separators=(",", ":"), ensure_ascii=False, sort_keys=True)


class Failure(Exception):
    def __init__(self, status, text):
        super().__init__(text)
        self.status = status
        self.text = text


def _truncate(text):
    data = text.encode("utf-8")
    if len(data) <= TRACEBACK_LIMIT:
        return text
    return data[-TRACEBACK_LIMIT:].decode("utf-8", "ignore")


def _load(source, entry_points):
    namespace = _fresh_namespace()
    exec(compile(source, "<rule>", "exec"), namespace)
    fns = []
    for name in entry_points:
        fn = namespace.get(name)
        if not callable(fn):
            raise Failure("raised_error", "missing entry point: %s" % name)
        fns.append(fn)
    return fns


def _call(fn, value):
    result = fn(copy.deepcopy(value))
    # round-trip through JSON so tuples become lists and junk is rejected
    try:
        return json.loads(json.dumps(result))
    except (TypeError, ValueError) as exc:
        raise Failure("raised_error", "result is not JSON-serializable: %s" % exc)


def _execute(req):
    op = req["op"]
    source = req.get("source")
    if not isinstance(source, str):
        raise Failure("protocol_error", "missing source")
    if op == "forward":
        (f,) = _load(source, [FORWARD])
        return {"value": _call(f, req.get("input"))}
    if op == "inverse":
        (g,) = _load(source, [INVERSE])
        return {"value": _call(g, req.get("input"))}
    if op == "cycle":
        inputs = req.get("inputs")
        if not isinstance(inputs, list):
            raise Failure("protocol_error", "cycle requires an inputs list")
        f, g = _load(source, [FORWARD, INVERSE])
        passes, forward, roundtrip, counterexample = [], [], [], None
        for x in inputs:
            fx = _call(f, x)
            gfx = _call(g, fx)
            ok = canonical(gfx) == canonical(x)
            passes.append(ok)
            forward.append(fx)
            roundtrip.append(gfx)
            if not ok and counterexample is None:
                counterexample = [x, fx, gfx]
        return {"value": {"passes": passes, "forward": forward,
                          "roundtrip": roundtrip, "counterexample": counterexample}}
    raise Failure("protocol_error", "unknown op: %r" % (op,))


# --- syntax-tree metrics -------------------------------------------------

def _branch_points(node):
    """Decision points in a subtree, not descending into nested function or
    class bodies."""
    count = 0
    stack = [node]
    while stack:
        n = stack.pop()
        if isinstance(n, (ast.If, ast.For, ast.AsyncFor, ast.While, ast.IfExp,
                          ast.ExceptHandler)):
            count += 1
        elif isinstance(n, ast.BoolOp):
            count += len(n.values) - 1
        elif isinstance(n, ast.comprehension):
            count += 1 + len(n.ifs)
        elif hasattr(ast, "match_case") and isinstance(n, ast.match_case):
            count += 1
        for child in ast.iter_child_nodes(n):
            if isinstance(child, (ast.FunctionDef, ast.AsyncFunctionDef, ast.ClassDef)):
                continue
            stack.append(child)
    return count


def _function_complexity(fn):
    return 1 + sum(_branch_points(stmt) for stmt in fn.body)


def _is_elif(node, lines):
    line = lines[node.lineno - 1] if node.lineno - 1 < len(lines) else ""
    return line[node.col_offset:].startswith("elif")


def _is_mutation(node):
    if isinstance(node, ast.AugAssign):
        return True
    if isinstance(node, (ast.Assign, ast.AnnAssign)):
        targets = node.targets if isinstance(node, ast.Assign) else [node.target]
        for t in targets:
            for sub in ast.walk(t):
                if isinstance(sub, (ast.Subscript, ast.Attribute)):
                    return True
        return False
    if isinstance(node, ast.Delete):
        return any(isinstance(t, (ast.Subscript, ast.Attribute)) for t in node.targets)
    if isinstance(node, ast.Expr) and isinstance(node.value, ast.Call):
        func = node.value.func
        return isinstance(func, ast.Attribute) and func.attr in MUTATING_METHODS
    return False


def measure_complexity(source):
    tree = ast.parse(source)
    lines = source.splitlines()
    stats = {"max_loop_depth": 0, "total_ifs": 0, "nested_if_depth": 0,
             "mutability_score": 0, "return_complexity": 0}

    def visit(node, loop_depth, if_depth):
        for child in ast.iter_child_nodes(node):
            child_loop, child_if = loop_depth, if_depth
            if isinstance(child, (ast.For, ast.AsyncFor, ast.While)):
                child_loop = loop_depth + 1
                stats["max_loop_depth"] = max(stats["max_loop_depth"], child_loop)
            elif isinstance(child, ast.If):
                stats["total_ifs"] += 1
                nested_in_if = isinstance(node, ast.If) and child in node.orelse
                if not (nested_in_if and _is_elif(child, lines)):
                    child_if = if_depth + 1
                stats["nested_if_depth"] = max(stats["nested_if_depth"], child_if)
            if isinstance(child, ast.stmt) and _is_mutation(child):
                stats["mutability_score"] += 1
            if isinstance(child, ast.Return):
                stats["return_complexity"] += 1 + (
                    _branch_points(child.value) if child.value is not None else 0)
            visit(child, child_loop, child_if)

    visit(tree, 0, 0)
    functions = [n for n in ast.walk(tree)
                 if isinstance(n, (ast.FunctionDef, ast.AsyncFunctionDef))]
    if functions:
        conditional = max(_function_complexity(f) for f in functions)
    else:
        conditional = 1 + sum(_branch_points(s) for s in tree.body)
    stats["conditional_complexity"] = conditional
    return stats


# --- request loop --------------------------------------------------------

def _limits(req):
    limits = dict(DEFAULT_LIMITS)
    if isinstance(req.get("limits"), dict):
        limits.update({k: v for k, v in req["limits"].items() if k in limits})
    return limits


def handle(req):
    start = time.monotonic()
    rid = req.get("id")
    resp = {"id": rid}
    op = req.get("op")
    limits = _limits(req)
    saved_stdout = sys.stdout
    try:
        if op == "ping":
            resp["status"] = "ok"
        elif op == "metrics":
            source = req.get("source")
            if not isinstance(source, str):
                raise Failure("protocol_error", "missing source")
            try:
                resp["metrics"] = measure_complexity(source)
            except SyntaxError as exc:
                raise Failure("protocol_error", "syntax error: %s" % exc)
            resp["status"] = "ok"
        else:
            soft, hard = resource.getrlimit(resource.RLIMIT_AS)
            mem = int(limits["memory_mb"]) * 1024 * 1024
            if hard != resource.RLIM_INFINITY:
                mem = min(mem, hard)
            resource.setrlimit(resource.RLIMIT_AS, (mem, hard))
            sys.stdout = io.StringIO()
            signal.setitimer(signal.ITIMER_REAL, max(int(limits["wall_clock_ms"]), 1) / 1000.0)
            try:
                out = _execute(req)
            finally:
                signal.setitimer(signal.ITIMER_REAL, 0)
                sys.stdout = saved_stdout
                resource.setrlimit(resource.RLIMIT_AS, (soft, hard))
            encoded = json.dumps(out["value"])
            if len(encoded.encode("utf-8")) > int(limits["output_bytes_max"]):
                raise Failure("raised_error", "output exceeds %d bytes" % limits["output_bytes_max"])
            resp["status"] = "ok"
            resp["value"] = out["value"]
    except WallClockExceeded:
        resp["status"] = "timeout"
        resp["error"] = "wall clock limit of %d ms exceeded" % limits["wall_clock_ms"]
    except MemoryError:
        resp["status"] = "memory_exceeded"
        resp["error"] = "memory limit of %d MiB exceeded" % limits["memory_mb"]
    except Failure as exc:
        resp["status"] = exc.status
        resp["error"] = _truncate(exc.text)
    except Exception:
        resp["status"] = "raised_error"
        resp["error"] = _truncate(traceback.format_exc())
    finally:
        sys.stdout = saved_stdout
    resp["duration_ms"] = int((time.monotonic() - start) * 1000)
    return resp


def serve():
    out = sys.stdout
    signal.signal(signal.SIGALRM, _on_alarm)
    sys.setrecursionlimit(2000)
    out.write(json.dumps({"protocol_version": PROTOCOL_VERSION}) + "\n")
    out.flush()
    for line in sys.stdin:
        if not line.strip():
            continue
        try:
            req = json.loads(line)
            if not isinstance(req, dict):
                raise ValueError("request must be an object")
        except ValueError as exc:
            resp = {"id": None, "status": "protocol_error",
                    "error": "malformed request: %s" % exc, "duration_ms": 0}
        else:
            resp = handle(req)
        try:
            text = json.dumps(resp, ensure_ascii=False)
        except (TypeError, ValueError) as exc:
            text = json.dumps({"id": resp.get("id"), "status": "protocol_error",
                               "error": "unencodable response: %s" % exc, "duration_ms": 0})
        out.write(text + "\n")
        out.flush()
    return 0


if __name__ == "__main__":
    sys.exit(serve())

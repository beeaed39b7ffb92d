"""Scenario files: JSON documents describing a game and its initial state.

Two model families are built in:

``unicycle-drive``
    Vehicles with unicycle dynamics, lane-keeping and speed-tracking costs,
    terminal lane equalities and pairwise separation inequalities.
``custom-lq``
    Coefficient tables given directly under ``coefficients``.
"""
from __future__ import annotations

import json
from importlib import resources
from pathlib import Path

import numpy as np

from .functions import Affine, Concat, PairDistance, Quadratic, Sum, Unicycle, empty_map
from .model import GameSpec, LQGame, Stage, is_regular, lq_from_spec

FAMILIES = ("unicycle-drive", "custom-lq")


class ScenarioError(ValueError):
    pass


def bundled_path(name: str) -> Path:
    """Path of a scenario shipped with the package, e.g. ``"lane_change"``."""
    if not name.endswith(".json"):
        name += ".json"
    return Path(str(resources.files("gfne") / "data" / name))


def _line_of(text: str, key: str) -> int | None:
    needle = f'"{key}"'
    for k, line in enumerate(text.splitlines(), 1):
        if needle in line:
            return k
    return None


class _Reader:
    def __init__(self, text: str, source: str):
        self.text, self.source = text, source

    def fail(self, field: str, msg: str):
        key = field.split(".")[-1].split("[")[0]
        line = _line_of(self.text, key)
        where = f"{self.source}:{line}" if line else self.source
        raise ScenarioError(f"{where}: field '{field}': {msg}")

    def get(self, obj, key, field, kind=None, required=True, default=None):
        if not isinstance(obj, dict):
            self.fail(field.rsplit(".", 1)[0] if "." in field else field, "expected an object")
        if key not in obj:
            if required:
                self.fail(field, "missing")
            return default
        v = obj[key]
        if kind is not None and not isinstance(v, kind) or isinstance(v, bool) and kind in (int, float, (int, float)):
            self.fail(field, f"expected {getattr(kind, '__name__', kind)}")
        return v

    def array(self, v, field, shape=None):
        try:
            a = np.array(v, dtype=float)
        except (TypeError, ValueError):
            self.fail(field, "expected a numeric array")
        if not np.all(np.isfinite(a)):
            self.fail(field, "non-finite entry")
        if shape is not None:
            if a.size == 0 and int(np.prod(shape)) == 0:
                return np.zeros(shape)
            if len(shape) == 2 and a.ndim == 1 and 1 in shape and a.size == max(shape):
                a = a.reshape(shape)
            if a.shape != tuple(shape):
                self.fail(field, f"expected shape {tuple(shape)}, got {a.shape}")
        return a


def load_scenario(path) -> GameSpec:
    """Parse a scenario file into a :class:`GameSpec`."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ScenarioError(f"{path}: cannot read ({e.strerror})") from None
    return parse_scenario(text, str(path))


def parse_scenario(text: str, source: str = "<scenario>") -> GameSpec:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ScenarioError(f"{source}:{e.lineno}:{e.colno}: {e.msg}") from None
    rd = _Reader(text, source)
    if not isinstance(doc, dict):
        raise ScenarioError(f"{source}: top level must be an object")
    if "seed" in doc:
        rd.fail("seed", "solver is deterministic; no seed field is accepted")
    dims = rd.get(doc, "dims", "dims", dict)
    n = rd.get(dims, "n", "dims.n", int)
    T = rd.get(dims, "T", "dims.T", int)
    N = rd.get(dims, "N", "dims.N", int)
    if n < 1 or T < 1 or N < 1:
        rd.fail("dims", "n, T and N must be at least 1")
    m = rd.get(dims, "m", "dims.m", list)
    if len(m) != N or not all(isinstance(v, int) and not isinstance(v, bool) and v >= 0 for v in m):
        rd.fail("dims.m", f"expected {N} nonnegative integers")
    model = rd.get(doc, "model", "model", dict)
    family = rd.get(model, "family", "model.family", str)
    if family not in FAMILIES:
        rd.fail("model.family", f"unknown model family '{family}' (known: {', '.join(FAMILIES)})")
    params = rd.get(model, "params", "model.params", dict, required=False, default={})
    x1 = rd.array(rd.get(doc, "x1", "x1", list), "x1")
    if x1.shape != (n,):
        rd.fail("x1", f"expected length {n}, got {x1.size}")
    if family == "unicycle-drive":
        spec = _unicycle_drive(rd, n, T, N, m, params, x1)
    else:
        spec = _custom_lq(rd, doc, n, T, N, m, x1)
    _check_counts(rd, dims, spec)
    return spec


def _check_counts(rd: _Reader, dims, spec: GameSpec):
    d = spec.dims
    for key, actual in (("a", d.a), ("b", d.b)):
        decl = dims.get(key)
        if decl is None:
            continue
        if not isinstance(decl, dict):
            rd.fail(f"dims.{key}", "expected {\"stage\": [...], \"terminal\": [...]}")
        stage = decl.get("stage", [0] * d.N)
        term = decl.get("terminal", [0] * d.N)
        if any(tuple(stage) != actual[t] for t in range(d.T)) or tuple(term) != actual[d.T]:
            rd.fail(f"dims.{key}", "row counts are inconsistent with the model")


# --------------------------------------------------------------------------
# unicycle driving family


DRIVE_DEFAULTS = {
    "dt": 0.1,
    "d_min": 3.3,
    "sigma_u": 10.0,
    "sigma_lane": 0.2,
    "sigma_speed": 10.0,
    "v_goal": [1.0, 1.5, 0.75],
    "lane": [-2.0, -2.0, 2.0],
    "sigma_polite": 5.0,
    "polite": [[0, 1]],
    "separation": [[0, 2], [1, 0]],
}


def _unicycle_drive(rd: _Reader, n, T, N, m, params, x1) -> GameSpec:
    """Per-vehicle costs at every control stage:
    ``sigma_u |u|^2 + sigma_lane (y - lane)^2 + sigma_speed (v - v_goal)^2``.
    A player listed as ``[i, j]`` in ``polite`` adds ``sigma_polite`` times
    player ``j``'s stage cost.  ``separation`` pairs ``[i, j]`` give player
    ``i`` the row ``|p_i - p_j| - d_min >= 0`` at every stage.  The terminal
    stage pins each vehicle's lateral position to its lane."""
    p = dict(DRIVE_DEFAULTS)
    for k, v in params.items():
        if k not in p:
            rd.fail(f"model.params.{k}", "unknown parameter")
        p[k] = v
    if n != 4 * N or any(mi != 2 for mi in m):
        rd.fail("dims", "unicycle-drive needs n = 4N and m = 2 per player")
    for key in ("v_goal", "lane"):
        if len(p[key]) != N:
            rd.fail(f"model.params.{key}", f"expected {N} entries")
    dt = float(p["dt"])
    if not dt > 0:
        rd.fail("model.params.dt", "must be positive")
    nz = n + 2 * N
    dyn = Unicycle(N, dt)

    def own_cost(j, nin, with_u):
        W = np.zeros((nin, nin))
        w = np.zeros(nin)
        y, v = 4 * j + 1, 4 * j + 2
        W[y, y] = 2 * p["sigma_lane"]
        w[y] = -2 * p["sigma_lane"] * p["lane"][j]
        W[v, v] = 2 * p["sigma_speed"]
        w[v] = -2 * p["sigma_speed"] * p["v_goal"][j]
        const = p["sigma_lane"] * p["lane"][j] ** 2 + p["sigma_speed"] * p["v_goal"][j] ** 2
        if with_u:
            for c in (n + 2 * j, n + 2 * j + 1):
                W[c, c] = 2 * p["sigma_u"]
        return Quadratic(W, w, const)

    costs = []
    for i in range(N):
        parts, weights = [own_cost(i, nz, True)], [1.0]
        for a, b in p["polite"]:
            if a == i:
                parts.append(own_cost(b, nz, True))
                weights.append(float(p["sigma_polite"]))
        costs.append(Sum(parts, weights) if len(parts) > 1 else parts[0])

    def separations(i, nin):
        rows = [PairDistance(nin, [4 * a, 4 * a + 1], [4 * b, 4 * b + 1], p["d_min"])
                for a, b in p["separation"] if a == i]
        return Concat(rows) if rows else empty_map(nin)

    stages = []
    for _ in range(T):
        stages.append(Stage(tuple(m), dyn, tuple(costs), tuple(empty_map(nz) for _ in range(N)),
                            tuple(separations(i, nz) for i in range(N))))
    lane_rows = []
    for i in range(N):
        M = np.zeros((1, n))
        M[0, 4 * i + 1] = 1.0
        lane_rows.append(Affine(M, [-p["lane"][i]]))
    stages.append(Stage((0,) * N, None, tuple(Quadratic(np.zeros((n, n))) for _ in range(N)),
                        tuple(lane_rows), tuple(separations(i, n) for i in range(N))))
    return GameSpec(n, x1, tuple(stages), family="unicycle-drive", params=p)


# --------------------------------------------------------------------------
# custom LQ family


STAGE_KEYS = ("A", "B", "c", "players")
PLAYER_KEYS = ("Q", "S", "R", "q", "r", "Hx", "Hu", "h", "Gx", "Gu", "g")


def _custom_lq(rd: _Reader, doc, n, T, N, m, x1) -> GameSpec:
    coeffs = rd.get(doc, "coefficients", "coefficients", dict)
    for key in coeffs:
        if key not in ("default", "terminal") and not (key.isdigit() and 1 <= int(key) <= T):
            rd.fail(f"coefficients.{key}", f"stage keys must be 'default', 'terminal' or 1..{T}")
    mt = sum(m)
    default = coeffs.get("default", {})
    A, B, c = [], [], []
    per = {k: [] for k in PLAYER_KEYS}

    def player_entry(block, i, key, where):
        pl = block.get("players")
        if pl is None:
            return None
        if not isinstance(pl, list) or len(pl) != N:
            rd.fail(f"{where}.players", f"expected a list of {N} objects")
        if not isinstance(pl[i], dict):
            rd.fail(f"{where}.players[{i}]", "expected an object")
        for k in pl[i]:
            if k not in PLAYER_KEYS:
                rd.fail(f"{where}.players[{i}].{k}", "unknown coefficient")
        return pl[i].get(key)

    for t in range(T + 1):
        name = "terminal" if t == T else str(t + 1)
        block = coeffs.get(name, {})
        where = f"coefficients.{name}"
        for k in block:
            if k not in STAGE_KEYS:
                rd.fail(f"{where}.{k}", "unknown coefficient")

        def pick(key):
            if key in block:
                return block[key], f"{where}.{key}"
            if t < T and key in default:
                return default[key], f"coefficients.default.{key}"
            return None, None

        if t < T:
            v, f = pick("A")
            A.append(np.eye(n) if v is None else rd.array(v, f, (n, n)))
            v, f = pick("B")
            B.append(np.zeros((n, mt)) if v is None else rd.array(v, f, (n, mt)))
            v, f = pick("c")
            c.append(np.zeros(n) if v is None else rd.array(v, f, (n,)))
        for key in PLAYER_KEYS:
            row = []
            for i in range(N):
                v, f = player_entry(block, i, key, where), f"{where}.players[{i}].{key}"
                if v is None and t < T:
                    v, f = player_entry(default, i, key, "coefficients.default"), \
                        f"coefficients.default.players[{i}].{key}"
                row.append((v, f))
            per[key].append(row)

    def mat(t, i, key, shape):
        v, f = per[key][t][i]
        return np.zeros(shape) if v is None else rd.array(v, f, shape)

    def rows_in(t, i, key):
        v, f = per[key][t][i]
        return 0 if v is None else rd.array(v, f).reshape(-1).size

    Q, S, R, q, r, Hx, Hu, h, Gx, Gu, g = ([] for _ in range(11))
    for t in range(T + 1):
        Q.append([mat(t, i, "Q", (n, n)) for i in range(N)])
        q.append([mat(t, i, "q", (n,)) for i in range(N)])
        a = [rows_in(t, i, "h") for i in range(N)]
        b = [rows_in(t, i, "g") for i in range(N)]
        Hx.append([mat(t, i, "Hx", (a[i], n)) for i in range(N)])
        h.append([mat(t, i, "h", (a[i],)) for i in range(N)])
        Gx.append([mat(t, i, "Gx", (b[i], n)) for i in range(N)])
        g.append([mat(t, i, "g", (b[i],)) for i in range(N)])
        if t < T:
            S.append([mat(t, i, "S", (mt, n)) for i in range(N)])
            R.append([mat(t, i, "R", (mt, mt)) for i in range(N)])
            r.append([mat(t, i, "r", (mt,)) for i in range(N)])
            Hu.append([mat(t, i, "Hu", (a[i], mt)) for i in range(N)])
            Gu.append([mat(t, i, "Gu", (b[i], mt)) for i in range(N)])
        else:
            for key in ("S", "R", "r", "Hu", "Gu"):
                if any(per[key][t][i][0] is not None for i in range(N)):
                    rd.fail(f"coefficients.terminal.players.{key}", "terminal stage has no controls")
    game = LQGame.build(n, tuple(m), A, B, c, Q, S, R, q, r, Hx, Hu, h, Gx, Gu, g)
    declared = doc.get("regular")
    regular = is_regular(game) if declared is None else bool(declared)
    spec = game.as_spec(x1)
    from dataclasses import replace
    return replace(spec, regular=regular, params={"declared_regular": declared})


def lq_game_of(spec: GameSpec) -> LQGame:
    """Coefficient form of a ``custom-lq`` scenario."""
    if spec.family != "custom-lq":
        raise ScenarioError(f"model family '{spec.family}' is not linear-quadratic")
    return lq_from_spec(spec)

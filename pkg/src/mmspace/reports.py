"""Configuration-driven experiment runner and machine-readable reports.

An experiment is one JSON config and one output directory.  The runner
discretises the space, builds the cube tree on demand and runs the
selected checks, each of which yields a :class:`Report`.  Reports never
contain timings, so equal configs give byte-identical report files;
runtimes go to ``timings.json``.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import threading
import time
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .bmo import ball_family, bmo_norm, bmo_norm_bruteforce, john_nirenberg_profile, sharp_function, verify_scale_independence
from .cubes import build_chain, build_cubes, build_nets, chain_certificates, covering_multiplicity, maximal_net, verify_cube_axioms
from .errors import ConfigurationError, InputError, MMSpaceError
from .hardy import BallIndex, atomic_decompose, check_atom, duality_check, glue_representatives
from .isoperimetry import (
    MetricBall,
    annuli_family,
    covering_select,
    default_B0,
    estimate_isoperimetric,
    slab_family,
    verify_complement_decay,
    verify_layer_growth,
)
from .kernels import atom_image_check, hormander_constants, kernel_matrix, operator_norm_l2, toy_kernel
from .maximal import fefferman_stein_check, rdi_check, rdi_params
from .space import GeometryParams, discretize, estimate_doubling, truncation_box, verify_approximate_midpoint
from .suites import log_exemplar, piecewise_suite, smooth_suite, spiky_suite
from .weights import Box, WeightSpec, check_admissible, check_tame, metric_equivalence, verify_integral_lemma

__all__ = [
    "SCHEMA",
    "ANCHORS",
    "CHECKS",
    "ExperimentConfig",
    "Report",
    "run_experiment",
    "emit_report",
    "exit_status",
    "load_reports",
]

SCHEMA = "mmspace-experiment/1"
REPORT_SCHEMA = "mmspace-report/1"

# one anchor formula per implemented statement
ANCHORS = {
    "tame": "m(x)/m(y) <= C(R) for |x-y| < R",
    "admissible": "|Hess phi|/|grad phi|^2 -> 0, d_r phi/|grad phi| >= c > 0, |grad phi| -> inf",
    "metric_equivalence": "C(R)^{-1} m(x)|x-y| <= rho(x,y) <= C(R) m(x)|x-y|",
    "doubling": "mu(B(x,tau r)) <= D_{tau,b} mu(B(x,r)), r <= b",
    "midpoint": "max(rho(x,z),rho(y,z)) <= beta rho(x,y) for rho(x,y) > R0",
    "cubes": "diam(Q_alpha^k) <= C1 delta^k; B(z_alpha^k, a0 delta^k) in Q_alpha^k",
    "chains": "N <= 4(2d/b)^{1/(1-log2(1+beta))} + 1",
    "covering": "mu(union Q) >= (1 - e^{-I kappa/2}) mu(A)/4",
    "isoperimetry": "mu(A_t) >= (1 - e^{-It}) mu(A); mu(B(x,r)^c) <= C e^{-Ir}",
    "bmo": "N_c^q(f) <= N_b^q(f) for c < b",
    "sharp": "sup_x f^{#,b}(x) = N_b^1(f)",
    "jn": "mu({x in B: |f - f_B| > s}) <= C e^{-c s/N_b^1(f)} mu(B)",
    "h1": "g = sum_k lambda_k a_k",
    "duality": "|int f g dmu| <= ||f||_{BMO} sum_k |lambda_k|",
    "glue": "eta^{B(o,b)} = 0",
    "rdi": "mu(A(alpha) cap S(eps alpha)^c) <= eta mu(A(eta' alpha))",
    "fs": "||f||_1 + ||f^{#,b'}||_p >= C ||f||_p",
    "kernel": "||T a||_1 <= C (nu_k + ||T||_2)",
    "hopital": "int_tau^{tau+ah} e^psi r^{d-1} dr >= C a int_0^{tau+ah} e^psi r^{d-1} dr",
}
CHECKS = tuple(ANCHORS)

# checks that only look at the weight, not at the discretised space
_SPEC_ONLY = {"tame", "admissible", "metric_equivalence", "hopital"}


def _plain(obj):
    """JSON-ready copy with numpy scalars unwrapped and non-finite floats spelled out."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    return obj


def _dumps(obj) -> str:
    return json.dumps(_plain(obj), sort_keys=True, indent=2) + "\n"


# ---------------------------------------------------------------------------
# configuration


@dataclass
class ExperimentConfig:
    weight: dict
    h: float
    box: list | None = None
    sign: str = "-"
    b: float = 2.0
    beta: float = 0.75
    R0: float = 0.0
    delta: float = 0.5
    k_min: int | None = None
    k_max: int | None = None
    checks: list = field(default_factory=list)
    out: str | None = None
    seed: int = 0
    options: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, data: dict, base_dir=None) -> "ExperimentConfig":
        """Parse and validate; raises :class:`ConfigurationError` on any problem."""
        if not isinstance(data, dict):
            raise ConfigurationError("config must be a JSON object")
        if data.get("schema") != SCHEMA:
            raise ConfigurationError(f"schema must be {SCHEMA!r}")
        base = Path(base_dir) if base_dir is not None else Path.cwd()
        weight = data.get("weight")
        if isinstance(weight, str):
            path = base / weight
            if not path.is_file():
                raise ConfigurationError(f"weight file {path} does not exist")
            weight = json.loads(path.read_text())
        if not isinstance(weight, dict):
            raise ConfigurationError("weight must be an inline spec or a path")
        geo = data.get("geometry", {})
        cub = data.get("cubes", {})
        out = data.get("out")
        if out is not None and not Path(out).is_absolute():
            out = str(base / out)
        try:
            cfg = cls(
                weight=weight,
                h=float(data["h"]),
                box=data.get("box"),
                sign=str(data.get("sign", "-")),
                b=float(geo.get("b", 2.0)),
                beta=float(geo.get("beta", 0.75)),
                R0=float(geo.get("R0", 0.0)),
                delta=float(cub.get("delta", 0.5)),
                k_min=cub.get("k_min"),
                k_max=cub.get("k_max"),
                checks=list(data.get("checks", [])),
                out=out,
                seed=int(data.get("seed", 0)),
                options=dict(data.get("options", {})),
            )
        except KeyError as exc:
            raise ConfigurationError(f"missing field {exc}") from None
        except (TypeError, ValueError) as exc:
            raise ConfigurationError(str(exc)) from None
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        path = Path(path)
        if not path.is_file():
            raise ConfigurationError(f"config file {path} does not exist")
        try:
            data = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"config is not valid JSON: {exc}") from None
        return cls.from_dict(data, path.parent)

    def validate(self) -> None:
        try:
            self.spec()
            GeometryParams(self.b, self.beta, self.R0).require_admissible()
            if self.box is not None:
                Box.coerce(self.box, self.spec().dimension)
        except (InputError, KeyError, TypeError) as exc:
            raise ConfigurationError(str(exc)) from None
        if not self.h > 0:
            raise ConfigurationError("h must be positive")
        if self.sign not in ("+", "-"):
            raise ConfigurationError("sign must be '+' or '-'")
        if not 0 < self.delta < 1:
            raise ConfigurationError("delta must lie in (0, 1)")
        unknown = [c for c in self.checks if c not in ANCHORS]
        if unknown:
            raise ConfigurationError(f"unknown checks: {', '.join(unknown)}")
        bad = [k for k in self.options if k not in ANCHORS]
        if bad:
            raise ConfigurationError(f"options for unknown checks: {', '.join(bad)}")

    def spec(self) -> WeightSpec:
        return WeightSpec.from_dict(self.weight)

    def to_dict(self) -> dict:
        return {
            "schema": SCHEMA,
            "weight": self.weight,
            "box": self.box,
            "h": self.h,
            "sign": self.sign,
            "geometry": {"b": self.b, "beta": self.beta, "R0": self.R0},
            "cubes": {"delta": self.delta, "k_min": self.k_min, "k_max": self.k_max},
            "checks": list(self.checks),
            "out": self.out,
            "seed": self.seed,
            "options": self.options,
        }

    def canonical(self) -> str:
        """Everything that affects the numbers (the output directory and the selection do not)."""
        d = self.to_dict()
        d.pop("out")
        d.pop("checks")
        return json.dumps(_plain(d), sort_keys=True, separators=(",", ":"))


# ---------------------------------------------------------------------------
# reports


@dataclass
class Report:
    check: str
    anchor: str
    inputs_hash: str
    constants: dict
    passed: bool
    margins: dict
    error: str | None = None
    runtime: float = 0.0

    def to_dict(self) -> dict:
        """Schema-stable content; the runtime is kept out so that the bytes are reproducible."""
        return {
            "schema": REPORT_SCHEMA,
            "check": self.check,
            "anchor": self.anchor,
            "inputs_hash": self.inputs_hash,
            "constants": _plain(self.constants),
            "passed": bool(self.passed),
            "margins": _plain(self.margins),
            "error": self.error,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Report":
        return cls(d["check"], d["anchor"], d["inputs_hash"], d["constants"], d["passed"], d["margins"], d.get("error"))


def _flat_constants(rep: Report):
    """Scalar constants of a report as ``(name, value)`` pairs, nested dicts joined by dots."""
    def walk(prefix, obj):
        if isinstance(obj, dict):
            for k in sorted(obj):
                yield from walk(f"{prefix}.{k}" if prefix else k, obj[k])
        elif not isinstance(obj, list):
            yield prefix, obj

    return list(walk("", _plain(rep.constants)))


def emit_report(reports, out, fmt: str = "json") -> list[Path]:
    """Write reports as one JSON file per check or as a single CSV (one row per check and constant)."""
    reports = list(reports)
    if not reports:
        raise InputError("no reports to emit")
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    if fmt == "json":
        paths = []
        for rep in reports:
            p = out / f"{rep.check}.json"
            p.write_text(_dumps(rep.to_dict()))
            paths.append(p)
        return paths
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["check", "constant", "value", "passed", "inputs_hash"])
        for rep in reports:
            for name, value in _flat_constants(rep):
                w.writerow([rep.check, name, json.dumps(value), str(bool(rep.passed)).lower(), rep.inputs_hash])
        p = out / "reports.csv"
        p.write_text(buf.getvalue())
        return [p]
    raise InputError(f"unknown format {fmt!r}")


def load_reports(out) -> list[Report]:
    """Reports previously written to ``out`` in summary order."""
    out = Path(out)
    summary = out / "summary.json"
    if not summary.is_file():
        raise InputError(f"{summary} does not exist")
    names = [r["check"] for r in json.loads(summary.read_text())["reports"]]
    return [Report.from_dict(json.loads((out / f"{n}.json").read_text())) for n in names]


def exit_status(reports) -> int:
    return 0 if all(r.passed for r in reports) else 1


# ---------------------------------------------------------------------------
# shared lazily built state


class _Context:
    """Objects shared by the checks; each is built once, under its own lock."""

    def __init__(self, config: ExperimentConfig):
        self.config = config
        self.spec = config.spec()
        self.geometry = GeometryParams(config.b, config.beta, config.R0)
        self._locks: dict[str, threading.Lock] = {}
        self._values: dict = {}
        self._guard = threading.Lock()

    def _get(self, key, build):
        with self._guard:
            lock = self._locks.setdefault(key, threading.Lock())
        with lock:
            if key not in self._values:
                self._values[key] = build()
            return self._values[key]

    def opts(self, check: str) -> dict:
        return dict(self.config.options.get(check, {}))

    def rng(self, check: str) -> np.random.Generator:
        return np.random.default_rng([self.config.seed, zlib.crc32(check.encode())])

    @property
    def box(self) -> Box:
        def build():
            if self.config.box is not None:
                return Box.coerce(self.config.box, self.spec.dimension)
            return truncation_box(self.spec)

        return self._get("box", build)

    @property
    def space(self):
        return self._get("space", lambda: discretize(self.spec, self.config.sign, self.box, self.config.h))

    @property
    def space_hash(self) -> str:
        def build():
            X = self.space
            H = hashlib.sha256()
            H.update(np.ascontiguousarray(X.mass).tobytes())
            if X.is_dense:
                H.update(np.ascontiguousarray(X.dist).tobytes())
            else:
                G = X.graph.tocsr()
                for a in (G.indptr, G.indices, G.data):
                    H.update(np.ascontiguousarray(a).tobytes())
            return H.hexdigest()

        return self._get("space_hash", build)

    def inputs_hash(self, check: str) -> str:
        H = hashlib.sha256(self.config.canonical().encode())
        if check not in _SPEC_ONLY:
            H.update(self.space_hash.encode())
        return H.hexdigest()

    @property
    def nets(self):
        c = self.config
        return self._get("nets", lambda: build_nets(self.space, c.delta, c.k_min, c.k_max))

    @property
    def tree(self):
        return self._get("tree", lambda: build_cubes(self.space, self.nets))

    def family(self, b: float):
        return self._get(("family", float(b)), lambda: ball_family(self.space, b))

    @property
    def B0(self) -> MetricBall:
        return self._get("B0", lambda: default_B0(self.space))

    @property
    def index(self):
        return self._get("index", lambda: BallIndex(self.space))

    @property
    def isoperimetry(self):
        def build():
            X, B0 = self.space, self.B0
            row = X.row(B0.center)
            top = float(row.max())
            fam = annuli_family(X, B0.center, np.linspace(B0.radius + 2 * X.max_edge, 0.9 * top, 12))
            if X.coords is not None:
                extent = float(np.max(np.abs(X.coords)))
                fam += slab_family(X, np.linspace(0.2 * extent, 0.95 * extent, 12))
            kmin = 2 * X.max_edge
            ks = np.linspace(kmin, max(0.5, 2 * kmin), 25)
            return estimate_isoperimetric(X, B0, fam, ks, strict=False), fam, ks

        return self._get("isoperimetry", build)

    def chain_level(self) -> int:
        """Coarsest net level whose scale satisfies the chain hypotheses for the configured ``b``."""
        c, tree = self.config, self.tree
        for k in sorted(self.nets.levels):
            s = c.delta**k
            if c.b > 4 * s * max(1 / (1 - c.beta), tree.a0) and s * min(1.0, 2 * tree.a0) > c.R0:
                return k
        raise ConfigurationError("no net level satisfies the chain hypotheses for this b")

    def rdi(self):
        def build():
            tree = self.tree
            nu = int(self.opts("rdi").get("nu", 3))
            if nu not in tree.levels:
                raise ConfigurationError(f"tree has no level {nu}")
            I = self.isoperimetry[0].I_hat
            return rdi_params(self.space, tree, I, self.B0, C0=tree.delta**nu, eta_prime=float(self.opts("rdi").get("eta_prime", 0.9)))

        return self._get("rdi", build)


# ---------------------------------------------------------------------------
# checks: each returns (constants, passed, margins)


def _chk_tame(ctx: _Context):
    o = ctx.opts("tame")
    rep = check_tame(ctx.spec, float(o.get("R", 1.0)), ctx.box, int(o.get("sample_count", 101)))
    return rep.to_dict(), rep.verdict, {"growth": rep.growth_tolerance * rep.constant_half_domain - rep.constant}


def _chk_admissible(ctx: _Context):
    o = ctx.opts("admissible")
    shell = float(o.get("shell_radius", 4.0 * max(1.0, ctx.spec.tau0)))
    rep = check_admissible(ctx.spec, ctx.box, shell, R=float(o.get("R", 1.0)))
    margins = {
        "hessian": rep.hessian_threshold - rep.hessian_ratio_tail,
        "radial": rep.radial_ratio_floor - rep.radial_threshold,
    }
    return rep.to_dict(), rep.verdict, margins


def _chk_metric_equivalence(ctx: _Context):
    o = ctx.opts("metric_equivalence")
    cmax = float(o.get("C_max", 10.0))
    res = metric_equivalence(ctx.spec, ctx.box, ctx.config.h, float(o.get("R", 1.0)))
    return res, res["constant"] <= cmax, {"C": cmax - res["constant"]}


def _chk_doubling(ctx: _Context):
    o = ctx.opts("doubling")
    X = ctx.space
    n = int(o.get("centers", 200))
    sample = np.unique(np.linspace(0, X.n - 1, min(n, X.n)).round().astype(np.int64))
    rep = estimate_doubling(X, ctx.config.b, float(o.get("tau", 2.0)), sample)
    return rep.to_dict(), bool(np.isfinite(rep.constant)), {}


def _chk_midpoint(ctx: _Context):
    o = ctx.opts("midpoint")
    rep = verify_approximate_midpoint(ctx.space, ctx.config.R0, ctx.config.beta, max_sources=o.get("max_sources", 100))
    return rep.to_dict(), rep.verdict, {"beta": ctx.config.beta - rep.measured_beta}


def _chk_cubes(ctx: _Context):
    tree = ctx.tree
    rep = verify_cube_axioms(ctx.space, tree)
    consts = {"a0": tree.a0, "C1": tree.C1, "delta": tree.delta, "levels": len(tree.levels), "axioms": rep.results}
    return consts, rep.all_pass and tree.a0 > 0 and math.isfinite(tree.C1), {}


def _chk_chains(ctx: _Context):
    o = ctx.opts("chains")
    c, X, tree = ctx.config, ctx.space, ctx.tree
    nu = int(o.get("level", ctx.chain_level()))
    centers = ctx.nets.at(nu)
    if centers.size < 2:
        raise ConfigurationError(f"level {nu} has fewer than two centres")
    rng = ctx.rng("chains")
    inner = tree.a0 * c.delta**nu
    worst, violations, short, certs = 0.0, 0, 0, True
    beta_eff = 0.0
    for _ in range(int(o.get("pairs", 200))):
        p, q = rng.choice(centers, 2, replace=False)
        ch = build_chain(X, ctx.nets, nu, int(p), int(q), c.b, c.beta, c.R0, a0=tree.a0)
        worst = max(worst, ch.N - ch.bound)
        if ch.N > ch.bound:
            violations += 1
            short += ch.distance < c.b / 2
        certs &= all(chain_certificates(X, ch, inner))
        beta_eff = max(beta_eff, ch.beta_effective)
    N0, _ = covering_multiplicity(X, ctx.nets, nu, c.b)
    consts = {
        "level": nu,
        "centers": int(centers.size),
        "violations": violations,
        "short_pair_violations": short,
        "certificates": certs,
        "beta_effective": beta_eff,
        "N0": N0,
    }
    return consts, violations == 0 and certs, {"N_minus_bound": -worst}


def _chk_covering(ctx: _Context):
    o = ctx.opts("covering")
    X, tree = ctx.space, ctx.tree
    nu = int(o.get("nu", 2))
    iso = ctx.isoperimetry[0]
    kappa = float(o.get("kappa", tree.C1 * tree.delta**2))
    B0 = ctx.B0
    # union of level-nu cubes lying wholly beyond B0 enlarged by kappa
    lab = tree.labels[tree.index(nu)]
    far = X.row(B0.center) > B0.radius + kappa
    keep = np.bincount(lab, weights=(~far).astype(float), minlength=tree.n_cubes(nu)) == 0
    A = keep[lab]
    if not A.any() or A.all():
        raise ConfigurationError("no proper union of cubes outside B0 for the covering check")
    sel = covering_select(X, tree, A, kappa, B0, nu, iso.I_hat)
    return sel.to_dict(), sel.verdict, {"mass": sel.mass - sel.bound}


def _chk_isoperimetry(ctx: _Context):
    o = ctx.opts("isoperimetry")
    X, B0 = ctx.space, ctx.B0
    rep, fam, ks = ctx.isoperimetry
    ball = B0.mask(X)
    growth, margin = True, math.inf
    for A in fam:
        a = A & ~ball
        if a.any() and not a.all():
            g = verify_layer_growth(X, B0, a, rep.I_hat, ks)
            growth &= bool(g.verdict is not False)
            if math.isfinite(g.min_margin):
                margin = min(margin, g.min_margin)
    row = X.row(B0.center)
    dec = verify_complement_decay(X, B0.center, np.linspace(0.5 * row.max() / 4, row.max(), 40), I=rep.I_hat, tolerance=float(o.get("tolerance", 0.1)))
    consts = {
        "I_hat": rep.I_hat,
        "kappa0": rep.kappa0,
        "sets_tested": rep.sets_tested,
        "decay_rate": dec.rate,
        "decay_C": dec.C,
        "decay_r_squared": dec.r_squared,
        "layer_growth": growth,
    }
    passed = rep.I_hat > 0 and growth and bool(dec.verdict)
    return consts, passed, {"layer_growth": margin, "decay": dec.rate - (1 - dec.tolerance) * rep.I_hat}


def _suite(ctx: _Context, check: str, default: int):
    o = ctx.opts(check)
    return piecewise_suite(ctx.space, int(o.get("functions", default)), seed=int(ctx.rng(check).integers(2**31)))


def _chk_bmo(ctx: _Context):
    o = ctx.opts("bmo")
    X, b = ctx.space, ctx.config.b
    q = float(o.get("q", 1.0))
    fs = _suite(ctx, "bmo", 10)
    fam = ctx.family(b)
    Ns = [bmo_norm(X, f, b, q, fam).N for f in fs]
    brute_err = None
    if X.n <= int(o.get("bruteforce_limit", 500)):
        brute_err = max(abs(N - bmo_norm_bruteforce(X, f, b, q)) for N, f in zip(Ns, fs))
    sc = verify_scale_independence(X, fs, b, b / 2, q)
    consts = {"q": q, "max_N": max(Ns), "bruteforce_error": brute_err, "monotone": sc.monotone, "max_ratio": sc.max_ratio}
    passed = sc.monotone and (brute_err is None or brute_err <= 1e-12 * max(1.0, max(Ns)))
    return consts, passed, {}


def _chk_sharp(ctx: _Context):
    X, b = ctx.space, ctx.config.b
    fam = ctx.family(b)
    gap = 0.0
    for f in _suite(ctx, "sharp", 10):
        N = bmo_norm(X, f, b, 1.0, fam).N
        gap = max(gap, abs(float(sharp_function(X, f, b, fam).max()) - N) / max(N, 1e-300))
    return {"max_relative_gap": gap}, gap <= 1e-12, {}


def _chk_jn(ctx: _Context):
    o = ctx.opts("jn")
    X, b = ctx.space, ctx.config.b
    x0 = int(o.get("point", ctx.B0.center))
    f = log_exemplar(X, x0)
    dev = np.abs(f - f[X.ball(x0, b)].mean())
    rep = john_nirenberg_profile(X, f, b, x0, b, np.linspace(0, float(dev.max()), 30), bmo_norm(X, f, b, 1.0, ctx.family(b)).N)
    r2 = float(o.get("r_squared", 0.95))
    return rep.to_dict() | {"s": None, "tail": None}, rep.c > 0 and rep.r_squared > r2, {"c": rep.c, "r_squared": rep.r_squared - r2}


def _decompositions(ctx: _Context, check: str, default: int):
    X, b = ctx.space, ctx.config.b
    fs = _suite(ctx, check, default)
    return fs, [atomic_decompose(X, f, b, 2.0, index=ctx.index) for f in fs]


def _chk_h1(ctx: _Context):
    X, b = ctx.space, ctx.config.b
    fs, decs = _decompositions(ctx, "h1", 20)
    worst_res, atoms_ok, n_atoms = 0.0, True, 0
    for f, dec in zip(fs, decs):
        l1 = float(np.sum(np.abs(f) * X.mass))
        worst_res = max(worst_res, float(np.sum(np.abs(dec.residual) * X.mass)) / l1)
        for a in dec.atoms:
            atoms_ok &= check_atom(X, a, b)[0]
        n_atoms += len(dec.atoms)
    return {"max_relative_residual": worst_res, "atoms": n_atoms, "atoms_ok": atoms_ok}, worst_res <= 1e-10 and atoms_ok, {"residual": 1e-10 - worst_res}


def _chk_duality(ctx: _Context):
    o = ctx.opts("duality")
    X, b = ctx.space, ctx.config.b
    _, decs = _decompositions(ctx, "duality", 20)
    rng = ctx.rng("duality")
    fam = ctx.family(b)
    slack, ok = math.inf, True
    for f in piecewise_suite(X, int(o.get("pairings", 20)), seed=int(rng.integers(2**31))):
        rep = duality_check(X, f, decs, b, 2.0, fam)
        slack = min(slack, rep.min_slack)
        ok &= rep.verdict
    return {"min_slack": slack, "total_mass": X.total_mass}, ok, {"slack": slack}


def _chk_glue(ctx: _Context):
    o = ctx.opts("glue")
    c, X, tree = ctx.config, ctx.space, ctx.tree
    nu = int(o.get("level", ctx.chain_level()))
    centers = ctx.nets.at(nu)
    rng = ctx.rng("glue")
    o_center = int(centers[0])
    inner = tree.a0 * c.delta**nu
    err, within, worst_ratio = 0.0, True, 0.0
    for f in smooth_suite(X.coords if X.coords is not None else np.arange(X.n), int(o.get("functions", 10)), seed=int(rng.integers(2**31))):
        shifts = rng.normal(size=centers.size) * 10
        locs = {int(z): np.where(X.ball(int(z), c.b), f + s, 0.0) for z, s in zip(centers, shifts)}
        g = glue_representatives(X, centers, c.b, locs, o_center, c.beta, inner)
        diff = g.values - f
        err = max(err, float(np.ptp(diff)))
        within &= g.within_bound
        worst_ratio = max(worst_ratio, float(np.max(np.abs(g.eta) / g.bounds)))
    return {"level": nu, "centers": int(centers.size), "max_error": err, "max_eta_over_bound": worst_ratio}, err <= 1e-9 and within, {"error": 1e-9 - err}


def _chk_rdi(ctx: _Context):
    o = ctx.opts("rdi")
    X, tree = ctx.space, ctx.tree
    p = ctx.rdi()
    fam = ctx.family(p.b_prime)
    fs = spiky_suite(X, int(o.get("functions", 20)), seed=int(ctx.rng("rdi").integers(2**31)))
    ok, nontrivial = True, 0
    for f in fs:
        r = rdi_check(X, tree, f, p, family=fam)
        ok &= r.verdict
        nontrivial += sum(1 for v in r.lhs if v > 0)
    consts = p.to_dict() | {"nontrivial_alphas": nontrivial}
    return consts, ok, {"eta_minus_one": p.eta - 1}


def _chk_fs(ctx: _Context):
    o = ctx.opts("fs")
    X = ctx.space
    tree = ctx.tree
    b_prime = float(o.get("b_prime", 2 * tree.C1 + tree.delta ** int(o.get("nu", 3))))
    coords = X.coords if X.coords is not None else np.arange(X.n, dtype=float)
    fs = smooth_suite(coords, int(o.get("functions", 20)), seed=int(ctx.rng("fs").integers(2**31)))
    rep = fefferman_stein_check(X, fs, float(o.get("p", 2.0)), b_prime, ctx.family(b_prime))
    return {"p": rep.p, "b_prime": rep.b_prime, "min_ratio": rep.min_ratio, "skipped": rep.skipped}, rep.min_ratio > 0, {"ratio": rep.min_ratio}


def _chk_kernel(ctx: _Context):
    o = ctx.opts("kernel")
    X, b = ctx.space, ctx.config.b
    limit = int(o.get("max_points", 400))
    if X.n > limit:
        raise ConfigurationError(f"kernel check limited to {limit} points (space has {X.n})")
    K = toy_kernel(X)
    kc = hormander_constants(X, K, b)
    sym = hormander_constants(X, 0.5 * (K + K.T), b)
    _, decs = _decompositions(ctx, "kernel", 5)
    atoms = [a for d in decs for a in d.atoms if a.kind != "exceptional"][: int(o.get("atoms", 20))]
    img = atom_image_check(X, K, atoms, kc.nu, operator_norm_l2(X, kernel_matrix(X, K)))
    consts = {"upsilon": kc.upsilon, "nu": kc.nu, "symmetric_upsilon": sym.upsilon, "symmetric_nu": sym.nu, "T_norm": img.T_norm, "C": img.C}
    passed = math.isfinite(kc.upsilon) and math.isfinite(kc.nu) and sym.upsilon == sym.nu and math.isfinite(img.C)
    return consts, passed, {}


def _chk_hopital(ctx: _Context):
    o = ctx.opts("hopital")
    d = ctx.spec.dimension
    taus, As = np.linspace(0, 5, 26), np.linspace(0.05, 1, 20)
    c_lin = verify_integral_lemma(lambda r: r, lambda r: np.ones_like(r), d, "lower-tail", taus, As)
    c_sq = verify_integral_lemma(lambda r: r * r, lambda r: 1 / (1 + 2 * r), d, "lower-tail", taus, As)
    floor = float(o.get("C_min", 1 - math.exp(-1) - 0.05 if d == 1 else 0.0))
    return {"C_linear": c_lin, "C_square": c_sq}, c_lin >= floor and c_lin > 0 and c_sq > 0, {"C_linear": c_lin - floor, "C_square": c_sq}


_RUNNERS = {
    "tame": _chk_tame,
    "admissible": _chk_admissible,
    "metric_equivalence": _chk_metric_equivalence,
    "doubling": _chk_doubling,
    "midpoint": _chk_midpoint,
    "cubes": _chk_cubes,
    "chains": _chk_chains,
    "covering": _chk_covering,
    "isoperimetry": _chk_isoperimetry,
    "bmo": _chk_bmo,
    "sharp": _chk_sharp,
    "jn": _chk_jn,
    "h1": _chk_h1,
    "duality": _chk_duality,
    "glue": _chk_glue,
    "rdi": _chk_rdi,
    "fs": _chk_fs,
    "kernel": _chk_kernel,
    "hopital": _chk_hopital,
}
assert set(_RUNNERS) == set(ANCHORS)


def _run_one(ctx: _Context, check: str) -> Report:
    t0 = time.perf_counter()
    try:
        consts, passed, margins = _RUNNERS[check](ctx)
        error = None
    except MMSpaceError as exc:
        consts, passed, margins, error = {}, False, {}, f"{type(exc).__name__}: {exc}"
    try:
        h = ctx.inputs_hash(check)
    except MMSpaceError:
        h = hashlib.sha256(ctx.config.canonical().encode()).hexdigest()
    return Report(check, ANCHORS[check], h, consts, bool(passed), margins, error, time.perf_counter() - t0)


def run_experiment(config: ExperimentConfig, threads: int = 1, write: bool = True) -> list[Report]:
    """Run the selected checks; with ``write`` the reports, a summary and timings go to ``config.out``.

    Checks are independent given the shared context, so they run on a
    thread pool; the output order is the order of ``config.checks``.
    """
    config.validate()
    ctx = _Context(config)
    checks = list(dict.fromkeys(config.checks))
    if threads > 1 and len(checks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            reports = list(pool.map(lambda c: _run_one(ctx, c), checks))
    else:
        reports = [_run_one(ctx, c) for c in checks]
    if write and config.out is not None:
        out = Path(config.out)
        out.mkdir(parents=True, exist_ok=True)
        if reports:
            emit_report(reports, out, "json")
        summary = {
            "schema": REPORT_SCHEMA,
            "config": json.loads(config.canonical()),
            "reports": [{"check": r.check, "passed": r.passed} for r in reports],
            "failed": [r.check for r in reports if not r.passed],
            "passed": exit_status(reports) == 0,
        }
        (out / "summary.json").write_text(_dumps(summary))
        (out / "timings.json").write_text(_dumps({r.check: round(r.runtime, 6) for r in reports}))
    return reports

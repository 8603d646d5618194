"""Command line: load a scenario, run the pipeline, write the report.

    morsewitten --scenario rp2 --format text
    morsewitten --file my_surface.toml --report out.json --dump-flowlines orbits.csv

Exit codes: 0 all checks pass, 2 a mathematical check failed, 3 bad
configuration, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import re
import sys
import time
from dataclasses import dataclass, field

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from . import scenarios
from .complex import (
    assemble_complex,
    cohomology,
    homology,
    homology_basis,
    induced_map_on_homology,
    morse_inequalities_check,
    poincare_duality_check,
)
from .continuation import ComplexBundle, continuation
from .critical import CriticalSet, assign_orientations, find_critical_points
from .errors import ComplexInconsistencyError, ConfigError, MorseError, ScenarioError
from .geometry import ManifoldSpec, ScaledFunction, involution_preserves_orientation, validate_spec
from .moduli import (
    CIRCLE_SAMPLES,
    EPSILON,
    LevelCurves,
    OrbitCatalog,
    Shooter,
    check_morse_smale,
    pair_broken_orbits,
    regular_level,
    trace_connecting_moduli,
)
from .flow import MAX_TIME
from .report import SCHEMA_VERSION, emit_report, write_flowlines
from .symbolics import parse_expression

DEFAULT_RESOLUTION = 2000

# --------------------------------------------------------------------------
# scenarios
# --------------------------------------------------------------------------

_ALLOWED = {
    "scenario": {"name", "ambient_dim", "constraints", "f", "involution", "symmetries", "box"},
    "options": {"or_seed", "coefficients", "continue_to", "levels", "max_time"},
    "tolerances": {"seed_count", "newton_tol", "dedup_tol", "circle_samples", "launch_radius", "resolution"},
}


@dataclass
class Scenario:
    """A manifold with its function plus pipeline options."""

    name: str
    spec: ManifoldSpec
    or_seed: int = 0
    coefficients: tuple = ("Z", "Z2")
    continue_to: str | None = None
    levels: tuple = ()
    max_time: float = MAX_TIME
    tolerances: dict = field(default_factory=dict)
    source: str = "builtin"
    artifacts: dict = field(default_factory=dict, repr=False)


def _line_of(text, key):
    for i, line in enumerate(text.splitlines(), 1):
        if re.match(rf"\s*{re.escape(key)}\s*=", line) or re.match(rf"\s*\[{re.escape(key)}\]", line):
            return i
    return None


def _matrix(value, n, what):
    M = np.array(value, dtype=float)
    if M.shape != (n, n):
        raise ScenarioError(f"{what} must be a {n}x{n} matrix, got shape {M.shape}")
    return M


def load_scenario_file(path):
    """Strict TOML scenario loader; unknown keys are rejected by name."""
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario file {path}: {exc}") from None
    text = raw.decode("utf-8", errors="replace")
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ScenarioError(f"{path}: {exc}") from None
    return scenario_from_dict(data, text, str(path))


def scenario_from_dict(data, text="", source="<dict>"):
    for table, body in data.items():
        if table not in _ALLOWED:
            line = _line_of(text, table)
            where = f" (line {line})" if line else ""
            raise ScenarioError(f"{source}: unknown table or key {table!r}{where}")
        if not isinstance(body, dict):
            raise ScenarioError(f"{source}: {table!r} must be a table")
        for key in body:
            if key not in _ALLOWED[table]:
                line = _line_of(text, key)
                where = f" (line {line})" if line else ""
                raise ScenarioError(f"{source}: unknown key {key!r} in [{table}]{where}")
    sc = data.get("scenario")
    if sc is None:
        raise ScenarioError(f"{source}: missing [scenario] table")
    for key in ("ambient_dim", "constraints", "f"):
        if key not in sc:
            raise ScenarioError(f"{source}: [scenario] needs {key!r}")
    N = sc["ambient_dim"]
    if not isinstance(N, int) or N < 1:
        raise ScenarioError(f"{source}: ambient_dim must be a positive integer")
    cons = sc["constraints"]
    if not isinstance(cons, list) or not all(isinstance(c, str) for c in cons):
        raise ScenarioError(f"{source}: constraints must be a list of strings")
    name = sc.get("name", source)
    spec = ManifoldSpec(
        ambient_dim=N,
        constraints=tuple(parse_expression(c, N) for c in cons),
        f=parse_expression(sc["f"], N),
        dim=N - len(cons),
        involution=_matrix(sc["involution"], N, "involution") if "involution" in sc else None,
        label=name,
        box=float(sc.get("box", 4.0)),
        symmetries=tuple(_matrix(m, N, "symmetry") for m in sc.get("symmetries", [])),
    )
    validate_spec(spec)
    opts = data.get("options", {})
    tol = dict(data.get("tolerances", {}))
    return Scenario(
        name=name,
        spec=spec,
        or_seed=int(opts.get("or_seed", 0)),
        coefficients=_coefficients(opts.get("coefficients", "z,z2")),
        continue_to=opts.get("continue_to"),
        levels=tuple(float(a) for a in opts.get("levels", [])),
        max_time=float(opts.get("max_time", MAX_TIME)),
        tolerances=tol,
        source=source,
    )


def builtin_scenario(name):
    spec = scenarios.builtin(name)
    return Scenario(name=spec.label, spec=spec)


def _coefficients(text):
    if isinstance(text, (list, tuple)):
        items = list(text)
    else:
        items = [t.strip() for t in str(text).split(",") if t.strip()]
    out = []
    for t in items:
        key = {"z": "Z", "z2": "Z2"}.get(t.lower())
        if key is None:
            raise ScenarioError(f"unknown coefficients {t!r}; use z, z2 or z,z2")
        if key not in out:
            out.append(key)
    if not out:
        raise ScenarioError("no coefficients requested")
    return tuple(out)


# --------------------------------------------------------------------------
# pipeline
# --------------------------------------------------------------------------


def _expr_text(f):
    return getattr(f, "text", repr(f))


class _Stage:
    """Collects timings and turns library errors into report entries."""

    def __init__(self, report):
        self.report = report
        self.timings = {}

    def run(self, name, fn, *args, **kw):
        t0 = time.perf_counter()
        try:
            return fn(*args, **kw)
        except MorseError as exc:
            self.report["errors"].append(
                {"stage": name, "type": type(exc).__name__, "message": str(exc), "exit_code": exc.exit_code}
            )
            raise _Abort(exc) from None
        finally:
            self.timings[name] = self.timings.get(name, 0.0) + time.perf_counter() - t0


class _Abort(Exception):
    def __init__(self, exc):
        self.exc = exc


def _check(passed, detail=""):
    return {"passed": passed, "detail": detail}


def _pick_level(levels, crits, x, z):
    lo, hi = crits[z].value, crits[x].value
    values = [c.value for c in crits]
    for a in levels:
        if lo < a < hi and all(abs(a - v) > 1e-9 for v in values):
            return a
    return regular_level(crits, x, z)


def _complex_for(spec, seed, tol, max_time):
    crits = find_critical_points(spec, seed_count=tol.get("seed_count"),
                                 newton_tol=tol.get("newton_tol", 1e-12),
                                 dedup_tol=tol.get("dedup_tol", 1e-6))
    Or = assign_orientations(crits, seed)
    shooter = Shooter(spec, crits, eps=tol.get("launch_radius", EPSILON),
                      samples=tol.get("circle_samples", CIRCLE_SAMPLES), max_time=max_time)
    return crits, Or, shooter


def run_scenario(s, record_timings=False):
    """Full pipeline; returns ``(report, exit_code)``.

    Order: critical points, Morse-Smale check, orbits and signs, complex,
    homology, cohomology, Morse inequalities, duality, broken-orbit pairing
    (surfaces), optional continuation.  A Morse-Smale failure stops the
    run before any complex is assembled.
    """
    spec = s.spec
    n = spec.dim
    report = {
        "schema_version": SCHEMA_VERSION,
        "scenario": {
            "name": s.name,
            "ambient_dim": spec.ambient_dim,
            "dim": n,
            "constraints": [_expr_text(c) for c in spec.constraints],
            "f": _expr_text(spec.f),
            "involution": None if spec.involution is None else spec.involution,
            "or_seed": s.or_seed,
            "coefficients": list(s.coefficients),
            "continue_to": s.continue_to,
        },
        "critical_points": [],
        "morse_smale": None,
        "orbits": None,
        "generators": None,
        "boundary": None,
        "homology": None,
        "cohomology": None,
        "checks": {
            name: _check(None)
            for name in ("d_squared", "morse_smale", "inequalities", "duality", "broken_orbit_pairing")
        },
        "continuation": None,
        "errors": [],
        "timings": None,
    }
    if s.continue_to:
        report["checks"]["continuation"] = _check(None)
    st = _Stage(report)
    tol = s.tolerances
    try:
        crits, Or, shooter = st.run("critical_points", _complex_for, spec, s.or_seed, tol, s.max_time)
        report["critical_points"] = [
            {"id": c.id, "location": c.location, "value": c.value, "index": c.index} for c in crits
        ]
        ms = st.run("morse_smale", check_morse_smale, spec, crits, shooter)
        report["morse_smale"] = {
            "passed": ms.passed,
            "offending": [{"source": a, "target": b, "target_lift": l} for a, b, l in ms.offending],
        }
        report["checks"]["morse_smale"] = _check(ms.passed, ms.describe())
        if not ms.passed:
            return _finish(report, st, record_timings)

        catalog = st.run("orbits", OrbitCatalog, spec, crits, Or, shooter)
        s.artifacts["catalog"] = catalog
        report["orbits"] = [
            {"source": o.source, "target": o.target, "target_lift": o.target_lift, "sign": o.sign,
             "level": o.level, "point": o.point}
            for o in catalog.all()
        ]
        try:
            cx = st.run("complex", assemble_complex, crits, catalog.orbits, n, s.name, s.or_seed)
        except _Abort as ab:
            if isinstance(ab.exc, ComplexInconsistencyError):
                report["checks"]["d_squared"] = _check(False, str(ab.exc))
            raise
        report["checks"]["d_squared"] = _check(True, "boundary squared vanishes")
        report["generators"] = {str(k): cx.generators[k] for k in range(n + 1)}
        report["boundary"] = {str(k): cx.d(k) for k in range(1, n + 1)}

        hom, coh = {}, {}
        for ring in s.coefficients:
            h = homology(cx, ring)
            c = cohomology(cx, ring)
            hom[ring] = {"betti": h.betti, "torsion": h.torsion, "groups": [h.describe(k) for k in range(n + 1)]}
            coh[ring] = {"betti": c.betti, "torsion": c.torsion, "groups": [c.describe(k) for k in range(n + 1)]}
        if "Z" in hom:
            hom["Z"]["generators"] = {
                str(k): homology_basis(cx, k).free.T.tolist() for k in range(n + 1)
            }
        report["homology"], report["cohomology"] = hom, coh

        hz = homology(cx, "Z")
        ineq = morse_inequalities_check(cx, hz)
        report["checks"]["inequalities"] = _check(
            ineq.passed,
            f"counts {ineq.counts}, Betti {ineq.betti}, alternating sums {ineq.partial_counts} "
            f">= {ineq.partial_betti}, Euler characteristic {ineq.euler}",
        )

        # duality against the complex of -f
        orientable = involution_preserves_orientation(spec)
        rings = ("Z", "Z2") if orientable else ("Z2",)
        neg = spec.with_function(ScaledFunction(spec.f, -1.0), label=f"-({s.name})")
        ncrits, nOr, nshooter = st.run("duality", _complex_for, neg, s.or_seed, tol, s.max_time)
        ncat = st.run("duality", OrbitCatalog, neg, ncrits, nOr, nshooter)
        ncx = st.run("duality", assemble_complex, ncrits, ncat.orbits, n, neg.label, s.or_seed)
        dual = [poincare_duality_check(cx, ncx, r) for r in rings]
        report["checks"]["duality"] = _check(
            all(d.passed for d in dual),
            "; ".join(f"over {d.coefficients}: H^k(f) {d.cohomology_f}, H_(n-k)(-f) {d.homology_minus_f}"
                      for d in dual)
            + ("" if orientable else " (non-orientable: Z2 only)"),
        )

        if n == 2:
            report["checks"]["broken_orbit_pairing"] = st.run(
                "broken_orbit_pairing", _pairing, s, crits, catalog
            )
        else:
            report["checks"]["broken_orbit_pairing"] = _check(None, "level-curve tracing is for surfaces")

        if s.continue_to:
            st.run("continuation", _continuation, s, report, crits, Or, catalog, cx)
    except _Abort:
        pass
    return _finish(report, st, record_timings)


def _pairing(s, crits, catalog):
    cset = catalog.cset
    res = s.tolerances.get("resolution", DEFAULT_RESOLUTION)
    curves, lines, ok = {}, [], True
    for x in crits:
        for z in crits:
            if x.index - z.index != 2:
                continue
            a = _pick_level(s.levels, crits, x.id, z.id)
            if a not in curves:
                curves[a] = LevelCurves(s.spec, cset, a, res, s.max_time)
            arcs = trace_connecting_moduli(s.spec, cset, x.id, z.id, a, catalog=catalog, level=curves[a],
                                           max_time=s.max_time)
            rep = pair_broken_orbits(s.spec, crits, catalog, x.id, z.id, arcs, strict=False)
            ok &= rep.ok
            lines.append(f"{x.id}->{z.id} at level {a:.6g}: {len(rep.broken)} broken orbits, "
                         f"{sum(len(arc.ends) for arc in arcs)} arc ends, "
                         f"{'bijection' if rep.bijection else 'NO bijection'}, arc sums {rep.arc_sums}")
    return _check(ok, "; ".join(lines) if lines else "no pairs of index difference two")


def _continuation(s, report, crits, Or, catalog, cx):
    partner = scenarios.builtin(s.continue_to)
    spec = s.spec
    if partner.ambient_dim != spec.ambient_dim or [_expr_text(c) for c in partner.constraints] != [
        _expr_text(c) for c in spec.constraints
    ]:
        raise ScenarioError(f"continuation partner {s.continue_to!r} lives on a different manifold")
    if (partner.involution is None) != (spec.involution is None):
        raise ScenarioError(f"continuation partner {s.continue_to!r} has a different involution")
    A = ComplexBundle(spec, crits, Or, catalog, cx)
    pc, pOr, psh = _complex_for(partner, s.or_seed, s.tolerances, s.max_time)
    pcat = OrbitCatalog(partner, pc, pOr, psh)
    pcx = assemble_complex(pc, pcat.orbits, spec.dim, partner.label, s.or_seed)
    B = ComplexBundle(partner, pc, pOr, pcat, pcx)
    fwd = continuation(A, B)
    back = continuation(B, A)
    m_fwd = induced_map_on_homology(fwd.psi, cx, pcx)
    m_back = induced_map_on_homology(back.psi, pcx, cx)
    round_trip = all(
        np.array_equal(m_back[k].free @ m_fwd[k].free, np.eye(m_fwd[k].free.shape[1], dtype=np.int64))
        for k in m_fwd
    )
    zero = all(not np.any(m) for cm in (fwd, back) for m in cm.all_lines.values())
    ok = fwd.delta_blocks_ok and back.delta_blocks_ok and round_trip and zero
    report["continuation"] = {
        "target": partner.label,
        "kappa": fwd.kappa,
        "delta": fwd.delta,
        "psi": {str(k): v for k, v in fwd.psi.items()},
        "psi_back": {str(k): v for k, v in back.psi.items()},
        "on_homology": {str(k): m.free for k, m in m_fwd.items()},
        "crossings": [{"source": a, "target": b, "sign": sg, "point": p} for a, b, sg, p in fwd.crossings],
    }
    detail = (f"chain map; product blocks {'ok' if fwd.delta_blocks_ok and back.delta_blocks_ok else 'BROKEN'}; "
              f"round trip on homology {'identity' if round_trip else 'NOT identity'}; "
              f"all-lines count {'zero' if zero else 'NONZERO'}")
    report["checks"]["continuation"] = _check(ok, detail)


def _finish(report, st, record_timings):
    if record_timings:
        report["timings"] = st.timings
    code = 0
    if report["errors"]:
        code = report["errors"][0]["exit_code"]
    elif any(c["passed"] is False for c in report["checks"].values()):
        code = 2
    report["exit_code"] = code
    return report, code


def dump_flowlines(s, path):
    """CSV of every connecting orbit sample; returns the number of orbits.

    Reuses the orbits of a previous :func:`run_scenario` on ``s`` if any.
    """
    spec = s.spec
    catalog = s.artifacts.get("catalog")
    if catalog is None:
        crits, Or, shooter = _complex_for(spec, s.or_seed, s.tolerances, s.max_time)
        ms = check_morse_smale(spec, crits, shooter)
        if not ms.passed:
            raise MorseError(f"{s.name} is not Morse-Smale ({ms.describe()}); no flow lines to dump")
        catalog = OrbitCatalog(spec, crits, Or, shooter)
    return write_flowlines(spec, catalog.all(), path)


# --------------------------------------------------------------------------
# entry point
# --------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    """Argument errors are configuration errors (exit 3), not failed checks."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(3, f"{self.prog}: error: {message}\n")


def build_parser():
    p = _Parser(
        prog="morsewitten",
        description="Morse homology of level-set manifolds from counted gradient flow lines.",
        allow_abbrev=False,
    )
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--scenario", metavar="NAME",
                     help="built-in scenario: " + ", ".join(sorted(scenarios.BUILTINS)) + " or torus_tilted(THETA)")
    src.add_argument("--file", metavar="PATH", help="TOML scenario file")
    p.add_argument("--or-seed", type=int, default=None, help="orientation seed (0 = eigenframes as computed)")
    p.add_argument("--coefficients", default=None, help="z, z2 or z,z2 (default both)")
    p.add_argument("--continue-to", metavar="NAME", default=None,
                   help="built-in scenario on the same manifold to compute the continuation map to")
    p.add_argument("--report", metavar="PATH", default=None, help="write the report here (default stdout)")
    p.add_argument("--format", choices=("json", "text"), default="json")
    p.add_argument("--dump-flowlines", metavar="PATH", default=None, help="CSV of all connecting orbits")
    p.add_argument("--max-time", type=float, default=None, help="flow time before a limit counts as unresolved")
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        s = load_scenario_file(args.file) if args.file else builtin_scenario(args.scenario)
        if args.or_seed is not None:
            s.or_seed = args.or_seed
        if args.coefficients is not None:
            s.coefficients = _coefficients(args.coefficients)
        if args.continue_to is not None:
            scenarios.builtin(args.continue_to)
            s.continue_to = args.continue_to
        if args.max_time is not None:
            if args.max_time <= 0:
                raise ConfigError("--max-time must be positive")
            s.max_time = args.max_time
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return exc.exit_code
    report, code = run_scenario(s, record_timings=args.format == "text")
    try:
        emit_report(report, args.format, args.report)
    except OSError as exc:
        print(f"cannot write report: {exc}", file=sys.stderr)
        return 3
    if args.dump_flowlines:
        if report["checks"]["morse_smale"]["passed"]:
            try:
                dump_flowlines(s, args.dump_flowlines)
            except MorseError as exc:
                print(f"flow-line dump failed: {exc}", file=sys.stderr)
                code = code or exc.exit_code
        else:
            print("not Morse-Smale: no flow lines dumped", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())

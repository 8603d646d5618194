"""Acceptance criteria 1 to 10, one test per criterion.

Each test carries a ``criterion`` mark; the terminal summary prints one
PASS/FAIL line per criterion.  Expected values come from standard topology
(homology of S^2, T^2 and RP^2) and from the explicit examples.
"""

import numpy as np
import pytest
import scipy.linalg

from morsewitten import (
    assign_orientations,
    builtin,
    homology,
    linearized_flow_at_critical,
    local_stable_graph,
    pair_broken_orbits,
    parse_expression,
    trace_connecting_moduli,
    verify_continuation,
)
from morsewitten.complex import assemble_complex
from morsewitten.critical import CriticalSet
from morsewitten.flow import check_stable_graph, hessian_in_eigenframe
from morsewitten.geometry import constraint_jets_batch
from morsewitten.moduli import regular_level
from morsewitten.symbolics import evaluate_jet2

from conftest import bundle, scenario_run

MORSE_SMALE = ("sphere_height", "sphere_quadratic", "sphere_two_peaks", "torus_tilted", "rp2")
EULER = {"sphere_height": 2, "sphere_quadratic": 2, "sphere_two_peaks": 2, "torus_tilted": 0, "rp2": 1}


def verdict(number, ok, detail=""):
    print(f"criterion {number}: {'PASS' if ok else 'FAIL'} {detail}")
    return ok


@pytest.mark.criterion(1, "RP^2 integral homology (Z, Z2, 0), cohomology (Z, 0, Z2); Z2 ranks 1, 1, 1; < 60 s")
def test_criterion_01_rp2():
    _, r, code, seconds = scenario_run("rp2")
    ok = (
        code == 0
        and r["homology"]["Z"]["groups"] == ["Z", "Z2", "0"]
        and r["cohomology"]["Z"]["groups"] == ["Z", "0", "Z2"]
        and r["homology"]["Z2"]["betti"] == [1, 1, 1]
        and r["cohomology"]["Z2"]["betti"] == [1, 1, 1]
        and seconds < 60
    )
    assert verdict(1, ok, f"{r['homology']['Z']['groups']} / {r['cohomology']['Z']['groups']} in {seconds:.1f} s")


@pytest.mark.criterion(2, "two peaks: 4 orbits, homology (Z, 0, Z) and (Z2, 0, Z2), H_2 generated by +-(x1 - x2); < 60 s")
def test_criterion_02_two_peaks():
    _, r, code, seconds = scenario_run("sphere_two_peaks")
    maxima = r["generators"]["2"]
    gens = r["homology"]["Z"]["generators"]["2"]
    ok = (
        code == 0
        and len(r["orbits"]) == 4
        and r["homology"]["Z"]["groups"] == ["Z", "0", "Z"]
        and r["homology"]["Z2"]["groups"] == ["Z2", "0", "Z2"]
        and len(maxima) == 2
        and len(gens) == 1 and sorted(gens[0]) == [-1, 1]
        and seconds < 60
    )
    assert verdict(2, ok, f"{len(r['orbits'])} orbits, H_2 generator {gens} on {maxima} in {seconds:.1f} s")


@pytest.mark.criterion(3, "tilted torus Morse-Smale with Betti (1, 2, 1) torsion-free; upright torus rejected; < 120 s")
def test_criterion_03_torus():
    _, r, code, seconds = scenario_run("torus_tilted")
    z = r["homology"]["Z"]
    counts = [sum(1 for c in r["critical_points"] if c["index"] == k) for k in range(3)]
    _, u, ucode, useconds = scenario_run("torus_untilted")
    saddles = {c["id"] for c in u["critical_points"] if c["index"] == 1}
    ok = (
        code == 0
        and r["checks"]["morse_smale"]["passed"]
        and z["betti"] == [1, 2, 1] and z["torsion"] == [[], [], []]
        and counts[2] - counts[1] + counts[0] == 0
        and ucode == 2
        and u["checks"]["morse_smale"]["passed"] is False
        and u["homology"] is None
        and any(o["source"] in saddles and o["target"] in saddles for o in u["morse_smale"]["offending"])
        and seconds < 120 and useconds < 120
    )
    assert verdict(3, ok, f"Betti {z['betti']} in {seconds:.1f} s; upright offending {u['morse_smale']['offending']}")


@pytest.mark.criterion(4, "boundary squares to zero exactly in every built-in scenario")
def test_criterion_04_d_squared():
    bad = []
    for name in MORSE_SMALE:
        cx = bundle(name).complex
        for k in range(2, cx.dim + 1):
            if np.any(cx.d(k - 1) @ cx.d(k)):
                bad.append((name, k))
    assert verdict(4, not bad, f"violations {bad}")


def pairing_for(name):
    b = bundle(name)
    out = []
    for x in b.crits:
        for z in b.crits:
            if x.index - z.index != 2:
                continue
            a = regular_level(b.crits, x.id, z.id)
            arcs = trace_connecting_moduli(b.spec, b.crits, x.id, z.id, a, catalog=b.catalog)
            rep = pair_broken_orbits(b.spec, b.crits, b.catalog, x.id, z.id, arcs, strict=False)
            out.append((x.id, z.id, len(rep.broken), rep.bijection, rep.arc_sums))
    return out


@pytest.mark.criterion(5, "broken orbits match the open ends of the moduli arcs with cancelling signs; < 120 s each")
@pytest.mark.parametrize("name", ["sphere_quadratic", "sphere_two_peaks"])
def test_criterion_05_gluing(name):
    import time

    t0 = time.perf_counter()
    rows = pairing_for(name)
    seconds = time.perf_counter() - t0
    ok = bool(rows) and all(bij and broken > 0 and all(s == 0 for s in sums) for _, _, broken, bij, sums in rows)
    assert verdict(5, ok and seconds < 120, f"{name}: {rows} in {seconds:.1f} s")


@pytest.mark.criterion(6, "continuation on the sphere pair: chain maps, round trip and constant homotopy give identity, "
                          "independent of delta and orientation, all-lines count zero; < 10 min")
def test_criterion_06_continuation():
    import time

    t0 = time.perf_counter()
    rep = verify_continuation(builtin("sphere_quadratic"), builtin("sphere_two_peaks"))
    seconds = time.perf_counter() - t0
    ok = (rep.chain_map and rep.blocks and rep.round_trip and rep.identity and rep.independent
          and rep.all_lines_zero and seconds < 600)
    assert verdict(6, ok, f"{rep.details} psi {({k: v.tolist() for k, v in rep.psi.items()})} in {seconds:.0f} s")


@pytest.mark.criterion(7, "ten random orientation seeds give identical Betti and torsion tables")
@pytest.mark.parametrize("name", MORSE_SMALE)
def test_criterion_07_orientation_independence(name):
    b = bundle(name)
    seeds = np.random.default_rng(20261015).integers(1, 2**31 - 1, size=10)
    ref = homology(b.complex, "Z")
    tables = []
    for seed in seeds:
        cat = b.catalog.resigned(assign_orientations(b.crits, int(seed)))
        cx = assemble_complex(b.crits, cat.orbits, b.spec.dim, name, int(seed))
        h = homology(cx, "Z")
        tables.append((h.betti, h.torsion))
    ok = all(t == (ref.betti, ref.torsion) for t in tables)
    assert verdict(7, ok, f"{name}: {ref.betti} {ref.torsion} for seeds {list(map(int, seeds))}")


@pytest.mark.criterion(8, "Morse inequalities with equality at the top degree; Euler characteristics 2, 0, 1")
@pytest.mark.parametrize("name", MORSE_SMALE)
def test_criterion_08_inequalities(name):
    _, r, _, _ = scenario_run(name)
    c = r["checks"]["inequalities"]
    b = bundle(name)
    counts = b.complex.counts
    euler = sum((-1) ** k * n for k, n in enumerate(counts))
    ok = c["passed"] and euler == EULER[name]
    assert verdict(8, ok, f"{name}: {c['detail']}")


def random_polynomial(rng):
    terms = []
    for _ in range(rng.integers(1, 7)):
        e = rng.multinomial(rng.integers(0, 5), [1 / 3] * 3)
        terms.append(f"({rng.uniform(-3, 3)!r})*x1^{e[0]}*x2^{e[1]}*x3^{e[2]}")
    return " + ".join(terms)


@pytest.mark.criterion(9, "derivatives, linearized flow, descent, constraint drift and stable graphs")
def test_criterion_09_analysis_layer():
    rng = np.random.default_rng(9)
    worst = 0.0
    for _ in range(100):
        e = parse_expression(random_polynomial(rng), 3)
        p = rng.uniform(-1.5, 1.5, 3)
        j = evaluate_jet2(e, p)
        h = 1e-5
        for i in range(3):
            dp = np.zeros(3)
            dp[i] = h
            fd = (evaluate_jet2(e, p + dp).value - evaluate_jet2(e, p - dp).value) / (2 * h)
            fdh = (evaluate_jet2(e, p + dp).gradient - evaluate_jet2(e, p - dp).gradient) / (2 * h)
            worst = max(worst, abs(fd - j.gradient[i]) / max(1.0, abs(j.gradient).max()),
                        np.abs(fdh - j.hessian[i]).max() / max(1.0, np.abs(j.hessian).max()))
    ad_ok = worst <= 1e-6

    lin_err, descent_ok, drift = 0.0, True, 0.0
    for name in MORSE_SMALE:
        b = bundle(name)
        for x in b.crits:
            H = hessian_in_eigenframe(b.spec, x)
            for t in (0.5, 1.0, 2.0):
                lin_err = max(lin_err, np.linalg.norm(linearized_flow_at_critical(b.spec, x, t) - scipy.linalg.expm(-t * H)))
        for o in b.catalog.all():
            tr = o.trajectory
            descent_ok &= bool(np.all(np.diff(tr.values) < 0))
            drift = max(drift, float(np.max(np.abs(constraint_jets_batch(b.spec, tr.points, 1)[0]))))

    q = bundle("sphere_quadratic")
    saddle = next(c for c in q.crits if c.index == 1)
    graph = local_stable_graph(q.spec, saddle, crits=q.crits)
    trajs = check_stable_graph(q.spec, CriticalSet(q.spec, q.crits), saddle, graph)
    graph_ok = all(tr.omega_limit == saddle.id for tr in trajs)

    ok = ad_ok and lin_err < 1e-6 and descent_ok and drift < 1e-12 and graph_ok
    assert verdict(9, ok, f"AD rel. error {worst:.2e}, linearized flow {lin_err:.2e}, descent {descent_ok}, "
                          f"drift {drift:.2e}, stable graph {len(graph.points)} points {graph_ok}")


@pytest.mark.criterion(10, "duality: cohomology matches complementary homology on S^2, T^2 over Z and RP^2 over Z2")
@pytest.mark.parametrize("name, ring", [("sphere_two_peaks", "Z"), ("sphere_quadratic", "Z"), ("torus_tilted", "Z"),
                                        ("rp2", "Z2")])
def test_criterion_10_duality(name, ring):
    _, r, _, _ = scenario_run(name)
    c = r["checks"]["duality"]
    co = r["cohomology"][ring]
    ho = r["homology"][ring]
    n = len(co["betti"]) - 1
    mirrored = all(co["betti"][k] == ho["betti"][n - k] and co["torsion"][k] == ho["torsion"][n - k] for k in range(n + 1))
    ok = c["passed"] and f"over {ring}" in c["detail"] and mirrored
    assert verdict(10, ok, f"{name} over {ring}: {c['detail']}")


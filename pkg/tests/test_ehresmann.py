import io
import math

import numpy as np
import pytest

from algpaths import expr as ex
from algpaths.algebroid import AlgebroidError
from algpaths.apath import APath
from algpaths.ehresmann import (ExampleConnection, FlatConnection,
                                GammaElement, as_comorphism, circle_loop,
                                density_scan, flatness_residual, holonomy,
                                holonomy_sweep, self_intersection_witness,
                                sheet_count, write_sweep_csv)

TWO_PI = 2.0 * math.pi


def conn_samples(count=50, seed=0):
    """Points with r bounded away from the removed axis, h crossing both
    the nu support and the slab edges."""
    rng = np.random.default_rng(seed)
    pts = []
    for _ in range(count):
        pts.append([rng.uniform(0.6, 1.4), rng.uniform(-1.0, 1.0),
                    rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0),
                    rng.uniform(-2.0, 2.0)])
    return pts


# ----------------------------------------------------- connection axioms

def test_example_connection_is_a_flat_section():
    conn = ExampleConnection(0.25)
    pts = conn_samples()
    assert conn.section_residual(pts) == 0.0
    assert flatness_residual(conn, pts) <= 1e-10


def test_zero_twist_connection_is_exactly_flat():
    conn = ExampleConnection(0.0)
    pts = conn_samples(20)
    assert flatness_residual(conn, pts) == 0.0


def test_curved_horizontal_lift_is_detected():
    # H e_1 = d_1 + x2 d_3, H e_2 = d_2: [He_1, He_2] = -d_3, fully vertical
    coords = ["x1", "x2", "x3"]
    H = [[1.0, 0.0], [0.0, 1.0], [ex.Var("x2"), 0.0]]
    fc = FlatConnection(coords, [ex.Var("x1"), ex.Var("x2")], H)
    pts = [(0.3, -0.4, 0.1), (1.0, 2.0, -1.0)]
    assert fc.section_residual(pts) == 0.0
    assert flatness_residual(fc, pts) == 1.0


def test_as_comorphism_verifies_the_section_property():
    coords = ["x1", "x2", "x3"]
    bad = FlatConnection(coords, [ex.Var("x1"), ex.Var("x2")],
                         [[1.0, 0.0], [0.0, 0.5], [0.0, 0.0]])
    with pytest.raises(AlgebroidError, match="not a section"):
        as_comorphism(bad, [(0.0, 0.0, 0.0)])
    good = ExampleConnection(0.25)
    c = as_comorphism(good, conn_samples(10))
    assert c is good.as_comorphism()          # cached object


def test_h_shape_is_validated():
    with pytest.raises(AlgebroidError, match="H must be"):
        FlatConnection(["x1", "x2"], [ex.Var("x1")], [[1.0]])


# -------------------------------------------------------------- holonomy

def test_circle_loop_is_closed_bitwise():
    conn = ExampleConnection(0.25)
    loop = circle_loop(conn, grid=100)
    assert np.array_equal(loop.base[0], loop.base[-1])
    assert np.array_equal(loop.eta[0], loop.eta[-1])
    assert len(loop.times) == 101


def test_holonomy_quarter_twist():
    conn = ExampleConnection(0.25)
    loop = circle_loop(conn, grid=1000)
    rep = holonomy(conn, loop, [1.0, 0.0, 1.0, 0.0, 0.0])
    assert rep.completed
    assert abs(rep.phase - TWO_PI * 0.25) <= 1e-6
    assert rep.phi_projection_error <= 1e-6
    # z transported from 1 to e^{i pi/2} = i, base point restored
    assert np.allclose(rep.end[:2], [1.0, 0.0], atol=1e-6)
    assert np.allclose(rep.end[2:4], [0.0, 1.0], atol=1e-6)


def test_holonomy_zero_twist_is_exactly_zero():
    conn = ExampleConnection(0.0)
    loop = circle_loop(conn, grid=500)
    rep = holonomy(conn, loop, [1.0, 0.0, 1.0, 0.0, 0.0])
    assert rep.phase == 0.0


def test_holonomy_outside_the_support_is_exactly_zero():
    conn = ExampleConnection(0.25)
    loop = circle_loop(conn, grid=500)
    rep = holonomy(conn, loop, [1.0, 0.0, 1.0, 0.0, 2.0])  # nu(2) = 0
    assert rep.phase == 0.0


def test_contractible_loop_has_no_holonomy():
    # a loop not encircling the removed axis transports z trivially
    conn = ExampleConnection(0.25)
    loop = circle_loop(conn, radius=0.5, center=(2.0, 0.0), grid=500)
    rep = holonomy(conn, loop, [2.5, 0.0, 1.0, 0.0, 0.0])
    assert rep.completed
    assert abs(rep.phase) <= 1e-9


def test_holonomy_is_additive_over_turns():
    conn = ExampleConnection(0.25)
    loop = circle_loop(conn, turns=3, grid=3000)
    rep = holonomy(conn, loop, [1.0, 0.0, 1.0, 0.0, 0.0])
    assert abs(rep.phase - 3 * TWO_PI * 0.25) <= 1e-6


def test_holonomy_requires_a_closed_loop():
    conn = ExampleConnection(0.25)
    tgt = conn.as_comorphism().target
    times = np.linspace(0.0, 1.0, 11)
    line = APath(tgt, times, [[t, 0.0] for t in times],
                 [[1.0, 0.0]] * 11)
    with pytest.raises(AlgebroidError, match="closed"):
        holonomy(conn, line, [0.0, 0.0, 1.0, 0.0, 0.0])


# ---------------------------------------------------------- sheet counts

def test_sheet_counts_for_rational_twists():
    assert [sheet_count(v) for v in (0.0, 0.25, 1.0 / 3.0, 0.5)] == [1, 4, 3, 2]
    assert sheet_count(2.0 / 5.0) == 5


def test_sheet_count_irrational_exceeds_every_k():
    assert sheet_count(math.sqrt(2.0) - 1.0) == math.inf
    assert sheet_count((math.sqrt(5.0) - 1.0) / 2.0) == math.inf


# ----------------------------------------------------------- density scan

def test_golden_twist_fills_the_torus():
    nu = (math.sqrt(5.0) - 1.0) / 2.0
    rep = density_scan(nu, 0.0, (1.0, 0.0), 1e4 * TWO_PI, 32)
    assert rep.cells_hit == rep.cells_total == 1024
    assert rep.coverage == 1.0


def test_rational_twist_traces_q_lines():
    rep = density_scan(1.0 / 3.0, 0.0, (1.0, 0.0), 1e3, 32)
    assert rep.line_count == 3
    assert abs(rep.max_gap - TWO_PI / 3.0) <= 1e-6
    for nu, q in ((0.5, 2), (2.0 / 5.0, 5), (3.0 / 7.0, 7), (5.0 / 12.0, 12)):
        assert density_scan(nu, 0.0, (1.0, 0.0), 200.0, 16).line_count == q


def test_density_scan_validates_inputs():
    with pytest.raises(ValueError, match="z0"):
        density_scan(0.5, 0.0, (0.0, 0.0), 10.0, 16)
    with pytest.raises(ValueError, match="bins"):
        density_scan(0.5, 0.0, (1.0, 0.0), 10.0, 1)


def test_density_report_serializes():
    rep = density_scan(0.5, 0.0, (1.0, 0.0), 100.0, 8)
    j = rep.to_json()
    assert j["bins"] == 8 and j["cells_total"] == 64
    assert j["line_count"] == 2 and 0.0 < j["coverage"] <= 1.0


# -------------------------------------------------------- self-intersection

def test_self_intersection_witness_quarter():
    conn = ExampleConnection(0.25)
    rep = self_intersection_witness(conn, 0.0, 0.7)
    assert rep.image_mismatch <= 1e-12
    assert abs(rep.gap - math.sqrt(2.0)) <= 1e-6     # 2 |sin(pi/4)|
    assert abs(rep.expected_gap - math.sqrt(2.0)) <= 1e-12
    assert not rep.degenerate


def test_self_intersection_witness_third():
    conn = ExampleConnection(1.0 / 3.0)
    rep = self_intersection_witness(conn, 0.0, 0.7)
    assert rep.image_mismatch <= 1e-12
    assert abs(rep.gap - math.sqrt(3.0)) <= 1e-6     # 2 |sin(pi/3)|


def test_self_intersection_degenerates_at_integer_twist():
    conn = ExampleConnection(1.0)
    rep = self_intersection_witness(conn, 0.0, 0.7)
    assert rep.degenerate
    assert rep.gap <= 1e-9


# ----------------------------------------------------------- the groupoid

def test_gamma_element_source_target():
    conn = ExampleConnection(1.0 / 3.0)
    g = GammaElement(conn, 1.0, 0.2, 1.5, 2.0, (1.0, 0.0), 0.0)
    assert g.source() == (1.0, 0.2, 1.0, 0.0, 0.0)
    r, th, w1, w2, h = g.target()
    assert (r, th, h) == (1.5, 2.2, 0.0)
    a = 2.0 / 3.0                                  # nu(0) tau
    assert math.isclose(w1, math.cos(a)) and math.isclose(w2, math.sin(a))


def test_gamma_composition_chains_taus_and_radii():
    conn = ExampleConnection(1.0 / 3.0)
    g1 = GammaElement(conn, 1.0, 0.2, 1.5, 2.0, (1.0, 0.0), 0.0)
    tgt = g1.target()
    g2 = GammaElement(conn, tgt[0], tgt[1], 2.0, 1.0, tgt[2:4], tgt[4])
    comp = g1.then(g2)
    assert comp.r == 1.0 and comp.rp == 2.0 and comp.tau == 3.0
    assert np.allclose(comp.target(), g2.target())
    assert not comp.is_unit()
    assert GammaElement(conn, 1.0, 0.3, 1.0, 0.0, (1.0, 0.0), 0.0).is_unit()


def test_gamma_composition_needs_matching_endpoints():
    conn = ExampleConnection(1.0 / 3.0)
    g1 = GammaElement(conn, 1.0, 0.2, 1.5, 2.0, (1.0, 0.0), 0.0)
    g2 = GammaElement(conn, 1.0, 0.0, 1.0, 1.0, (1.0, 0.0), 0.0)
    with pytest.raises(ValueError, match="cannot compose"):
        g1.then(g2)


def test_gamma_element_validates_its_chart():
    conn = ExampleConnection(0.25)
    with pytest.raises(ValueError, match="r, r'"):
        GammaElement(conn, 0.0, 0.0, 1.0, 1.0, (1.0, 0.0), 0.0)
    with pytest.raises(ValueError, match="slab"):
        GammaElement(conn, 1.0, 0.0, 1.0, 1.0, (1.0, 0.0), 1.5)


# ---------------------------------------------------------------- sweeps

def test_holonomy_sweep_rows_and_csv():
    conn = ExampleConnection(1.0 / 3.0)
    rows = holonomy_sweep(conn, [0.0, 0.6], grid=400)
    assert [r["sheets"] for r in rows] == [3, 1]
    assert abs(rows[0]["holonomy_angle"] - TWO_PI / 3.0) <= 1e-6
    assert abs(rows[1]["holonomy_angle"]) <= 1e-9
    assert rows[0]["nu"] == pytest.approx(1.0 / 3.0)
    buf = io.StringIO()
    write_sweep_csv(rows, buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "h,nu,holonomy_angle,sheets"
    assert lines[1].endswith(",3") and lines[2].endswith(",1")


def test_holonomy_sweep_reports_infinite_sheets():
    conn = ExampleConnection(math.sqrt(2.0) - 1.0)
    rows = holonomy_sweep(conn, [0.0], grid=200)
    assert rows[0]["sheets"] == math.inf
    buf = io.StringIO()
    write_sweep_csv(rows, buf)
    assert buf.getvalue().splitlines()[1].endswith(",inf")

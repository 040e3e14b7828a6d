import csv
import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from glod.composer import Box, EntryRef
from glod.denoiser import Condition
from glod.errors import FormatError, InvalidArgumentError
from glod.layout import LayoutTarget
from glod.scene import (
    OBJECT_BOX,
    SUBJECT_BOX,
    GlobalSpec,
    LocalSpec,
    PaletteOracle,
    Scene,
    Scores,
    Template,
    ToyWorld,
    alignment_scores,
    crop,
    dumps,
    generate_testset,
    infection_score,
    load_scene,
    loads,
    metrics_csv,
    save_scene,
    score_case,
)
from glod.scene.metrics import CSV_COLUMNS
from glod.scene.run import METHODS, config_for
from glod.scene.testset import world_oracle
from glod.schedule import make_schedule

names = st.text(alphabet="abcdefghijklmnopqrstuvwxyz_", min_size=1, max_size=6).filter(lambda s: s != "null")
conditions = st.builds(lambda c, a: Condition.token(c, *a), names, st.lists(names, max_size=2))


@st.composite
def boxes(draw):
    x0 = draw(st.floats(0, 0.9))
    y0 = draw(st.floats(0, 0.9))
    return Box(x0, y0, draw(st.floats(x0 + 0.01, 1.0)), draw(st.floats(y0 + 0.01, 1.0)))


@st.composite
def scenes(draw):
    n_g = draw(st.integers(0, 3))
    gl = tuple(GlobalSpec(draw(conditions), draw(st.floats(-10, 10))) for _ in range(n_g))
    locs = []
    for j in range(draw(st.integers(0, 3))):
        opts = ["null"] + [f"global:{i}" for i in range(n_g)] + [f"local:{k}" for k in range(j)]
        locs.append(LocalSpec(draw(conditions), draw(boxes()), draw(st.floats(-10, 10)), draw(st.sampled_from(opts))))
    layout = tuple(LayoutTarget(draw(conditions), draw(boxes())) for _ in range(draw(st.integers(0, 2))))
    size = (draw(st.integers(1, 16)), draw(st.integers(1, 16)), draw(st.sampled_from([1, 3])))
    return Scene(gl, tuple(locs), size, draw(st.integers(0, 2**63)), layout, draw(names))


@settings(max_examples=80, deadline=None)
@given(scenes())
def test_scene_round_trip(scene):
    text = dumps(scene)
    assert loads(text) == scene
    assert dumps(loads(text)) == text


def test_scene_file_round_trip(tmp_path):
    sc = generate_testset(n=1)[0].decomposed
    save_scene(tmp_path / "s.json", sc)
    assert load_scene(tmp_path / "s.json") == sc


def test_scene_object_condition_form():
    doc = {
        "format": "glod-scene/1",
        "image_size": [4, 4, 1],
        "global": [{"condition": {"kind": "token", "category": "g", "attributes": ["x"]}}],
        "local": [{"condition": "o[a]", "box": [0, 0, 0.5, 0.5]}],
    }
    sc = Scene.from_json(doc)
    assert sc.global_conditions[0].condition == Condition.token("g", "x")
    assert sc.global_conditions[0].weight == 7.5 and sc.local_conditions[0].base == "global:0"


@pytest.mark.parametrize(
    "text",
    [
        "not json",
        '{"format": "other"}',
        '{"format": "glod-scene/1"}',
        '{"format": "glod-scene/1", "image_size": [4, 4, 1], "local": [{"condition": "a", "box": [0, 0, 2, 1]}]}',
        '{"format": "glod-scene/1", "image_size": [4, 4, 1], "global": [{"condition": "a[b"}]}',
    ],
)
def test_scene_parse_errors(text):
    with pytest.raises((FormatError, InvalidArgumentError)):
        loads(text)


def test_scene_reference_errors():
    a = Condition.token("a")
    with pytest.raises(InvalidArgumentError):
        Scene((), (LocalSpec(a, Box(0, 0, 1, 1), 1.0, "global:0"),))
    with pytest.raises(InvalidArgumentError, match="cycle"):
        Scene((), (LocalSpec(a, Box(0, 0, 1, 1), 1.0, "local:1"), LocalSpec(a, Box(0, 0, 1, 1), 1.0, "local:0")))
    with pytest.raises(InvalidArgumentError):
        Scene((), (LocalSpec(a, Box(0, 0, 1, 1), 1.0, "sideways:0"),))


def test_scene_layer_stack_depths():
    g, a, b = Condition.token("g"), Condition.token("a"), Condition.token("b")
    sc = Scene(
        (GlobalSpec(g, 2.0),),
        (LocalSpec(b, Box(0, 0, 0.5, 1), 1.0, "local:1"), LocalSpec(a, Box(0, 0, 1, 1), 3.0, "global:0")),
        (4, 4, 1),
    )
    stack = sc.layer_stack()
    assert [len(ly.entries) for ly in stack.layers] == [1, 1, 1, 1]
    assert stack.entry(EntryRef(2, 0)).condition == a and stack.entry(EntryRef(2, 0)).base == EntryRef(1, 0)
    assert stack.entry(EntryRef(3, 0)).condition == b and stack.entry(EntryRef(3, 0)).base == EntryRef(2, 0)
    assert sc.layer_stack(include_locals=False).local_refs() == []
    assert [t.condition for t in sc.layout_targets()] == [b, a]


def test_scene_warnings():
    a = Condition.token("a")
    sc = Scene(
        (),
        (LocalSpec(a, Box(0, 0, 0.7, 1), 1.0, "null"), LocalSpec(a, Box(0.5, 0, 1, 1), 1.0, "null"), LocalSpec(a, Box(0.9, 0.9, 0.95, 0.95), 1.0, "null")),
        (4, 4, 1),
    )
    w = sc.warnings()
    assert any("overlap" in m for m in w) and any("no pixel" in m for m in w)


# --- test set ---------------------------------------------------------------


def test_default_testset_size_and_layout():
    cases = generate_testset()
    assert len(cases) == 2500
    assert len({c.combo for c in cases}) == 2500
    c = cases[0]
    assert c.subject_box == SUBJECT_BOX and c.object_box == OBJECT_BOX
    assert SUBJECT_BOX.x1 <= OBJECT_BOX.x0
    assert [lc.box for lc in c.decomposed.local_conditions] == [SUBJECT_BOX, OBJECT_BOX]
    assert len(c.full.global_conditions) == 1 and not c.full.local_conditions


def test_testset_edge_cases():
    assert generate_testset(n=0) == []
    assert generate_testset(n=30, seed=4) == generate_testset(n=30, seed=4)
    assert generate_testset(n=30, seed=4) != generate_testset(n=30, seed=5)
    small = Template(("a",), ("b",), ("r", "g"), ("i",))
    assert len(generate_testset(small, 5)) == 5  # past the 2-combination cross product
    with pytest.raises(InvalidArgumentError):
        Template(subjects=())
    with pytest.raises(InvalidArgumentError):
        generate_testset(n=-1)


def test_template_json_round_trip():
    t = Template(("x", "y"), ("z",), ("red", "blue"), ("near",), (4, 4, 3), 3.0)
    assert Template.from_json(t.to_json()) == t


def test_toy_world_render_and_mixture():
    world = ToyWorld()
    case = generate_testset(n=1)[0]
    s, o, a_s, a_o, i = case.combo
    img = world.render(i, a_s, a_o)
    np.testing.assert_array_equal(crop(img, case.subject_box), np.broadcast_to(world.palette[a_s], crop(img, case.subject_box).shape))
    spec = world.mixture_for(case)
    assert spec.num_components == 125
    full_idx = spec.components(case.full.global_conditions[0].condition)
    assert len(full_idx) == 2  # intended and swapped colouring


# --- metrics ----------------------------------------------------------------


@pytest.fixture
def scored():
    world = ToyWorld()
    case = generate_testset(n=1, seed=2)[0]
    return world, case, world_oracle(world)


def test_perfect_subject_match_scores_100(scored):
    world, case, oracle = scored
    s, o, a_s, a_o, i = case.combo
    img = world.render(i, a_s, a_o)
    sg, sls, slo, sgl = alignment_scores(img, case, oracle)
    assert sls == pytest.approx(100.0) and slo == pytest.approx(100.0)
    assert sgl == pytest.approx((sg + sls + slo) / 3)
    assert infection_score(img, case, oracle) == pytest.approx(0.0, abs=1e-9)


class Fixed:
    def __init__(self, values):
        self.values = list(values)

    def score(self, region, c):
        return self.values.pop(0)


def test_sgl_is_arithmetic_mean(scored):
    _, case, _ = scored
    assert alignment_scores(np.zeros((8, 8, 3)), case, Fixed([10.0, 20.0, 30.0]))[3] == 20.0


def test_infection_examples(scored):
    world, case, oracle = scored

    class Zero:
        def score(self, region, c):
            return 0.0

    assert infection_score(np.zeros((8, 8, 3)), case, Zero()) == 0.0
    assert infection_score(np.zeros((8, 8, 3)), case, Fixed([30.0, 50.0])) == 40.0


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_metric_bounds_and_swap_symmetry(seed):
    world = ToyWorld()
    oracle = world_oracle(world)
    case = generate_testset(n=1, seed=seed % 1000)[0]
    img = np.random.default_rng(seed).uniform(-1, 1, (8, 8, 3))
    sc = score_case(img, case, oracle)
    for v in (sc.S_g, sc.S_ls, sc.S_lo, sc.S_gl, sc.S_i):
        assert 0.0 <= v <= 100.0
    sw = score_case(img, case.swapped(), oracle)
    assert sw.S_ls == sc.S_lo and sw.S_lo == sc.S_ls
    assert sw.S_i == pytest.approx(sc.S_i, abs=1e-12)


def test_oracle_posterior_rows_sum_to_one(scored):
    _, _, oracle = scored
    p = oracle.posteriors(np.random.default_rng(0).uniform(-3, 3, (5, 5, 3)))
    np.testing.assert_allclose(p.sum(axis=1), 1.0)
    with pytest.raises(InvalidArgumentError):
        PaletteOracle({"r": np.zeros(3)}, tau=0)


def test_degenerate_crop():
    with pytest.raises(InvalidArgumentError):
        crop(np.zeros((2, 2, 3)), Box(0.0, 0.0, 0.2, 0.2))


def test_metrics_csv_layout():
    text = metrics_csv([("case_0", Scores(1.0, 2.0, 3.0, 2.0, 0.5), "glod", 3), ("case_1", None, "glod", 4)])
    lines = text.splitlines()
    assert lines[0].startswith("# region_rule=")
    rows = list(csv.reader(io.StringIO("\n".join(lines[1:]))))
    assert rows[0] == CSV_COLUMNS
    assert rows[1] == ["case_0", "1.0", "2.0", "3.0", "2.0", "0.5", "glod", "3"]
    assert rows[2] == ["case_1", "", "", "", "", "", "glod", "4"]


# --- methods ----------------------------------------------------------------


def test_config_for_methods():
    s = make_schedule(10)
    case = generate_testset(n=1)[0]
    cfg, _ = config_for(case.decomposed, "glod", s)
    assert len(cfg.stack.local_refs()) == 2 and len(cfg.layout_targets) == 2
    cfg, _ = config_for(case.decomposed, "locals-removed", s)
    assert not cfg.stack.local_refs()
    cfg, _ = config_for(case.full, "baseline-cfg", s)
    assert not cfg.layout.enabled and cfg.layout_targets == ()
    cfg, _ = config_for(case.full, "layout-only", s)
    assert cfg.layout.enabled and len(cfg.layout_targets) == 2
    assert set(METHODS) == {"glod", "baseline-cfg", "layout-only", "locals-removed"}
    with pytest.raises(InvalidArgumentError):
        config_for(case.full, "magic", s)
    with pytest.raises(InvalidArgumentError):
        config_for(Scene((), (), (8, 8, 3)), "layout-only", s)

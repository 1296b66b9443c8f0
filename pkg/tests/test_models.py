import numpy as np
import pytest

from ktbench.models import (
    DKT,
    SAKT,
    CapabilityError,
    MeanRateBaseline,
    advance_through,
    load_checkpoint,
    make_model,
    save_checkpoint,
)
from ktbench.preprocess import ExpandedStep


def fake_steps(rng, n_items, n):
    return [
        ExpandedStep(int(rng.integers(0, n_items)), i, int(rng.integers(0, 2)), i)
        for i in range(n)
    ]


def all_models(n_items=6, m=10):
    return [
        DKT(n_items, dim=8, context_len=m, seed=0),
        SAKT(n_items, dim=8, n_heads=2, n_blocks=1, context_len=m, seed=0),
        SAKT(n_items, dim=8, n_heads=2, n_blocks=2, context_len=m, seed=0),
    ]


@pytest.mark.parametrize("model", all_models(), ids=lambda m: f"{m.arch}{getattr(m,'n_blocks','')}")
def test_queries_strictly_inside_unit_interval(model):
    rng = np.random.default_rng(0)
    state = model.init_state()
    for step in fake_steps(rng, model.n_items, 15):
        for item in range(model.n_items):
            p = model.query(state, item)
            assert 0.0 < p < 1.0
        state = model.advance(state, step.item_id, step.response)


@pytest.mark.parametrize("model", all_models(), ids=lambda m: f"{m.arch}{getattr(m,'n_blocks','')}")
def test_causality_future_edits_do_not_change_past_queries(model):
    rng = np.random.default_rng(1)
    steps = fake_steps(rng, model.n_items, 12)
    prefix = steps[:6]
    state = advance_through(model, prefix)
    before = [model.query(state, item) for item in range(model.n_items)]
    # mutate the future in every way and re-run the prefix
    mutated = prefix + [ExpandedStep(0, 99, 1 - s.response, 99) for s in steps[6:]]
    state2 = advance_through(model, mutated[:6])
    after = [model.query(state2, item) for item in range(model.n_items)]
    assert before == after


@pytest.mark.parametrize("model", all_models(), ids=lambda m: f"{m.arch}{getattr(m,'n_blocks','')}")
def test_repeated_evaluation_is_bit_identical(model):
    rng = np.random.default_rng(2)
    steps = fake_steps(rng, model.n_items, 9)
    state = advance_through(model, steps)
    first = [model.query(state, item) for item in range(model.n_items)]
    second = [model.query(state, item) for item in range(model.n_items)]
    assert first == second


def test_recurrent_state_carries_past_m():
    # queries beyond the window length still depend on the earliest steps
    m = 8
    model = DKT(4, dim=8, context_len=m, seed=3)
    rng = np.random.default_rng(3)
    steps = fake_steps(rng, 4, 3 * m)
    state = advance_through(model, steps)
    flipped = [ExpandedStep(steps[0].item_id, 0, 1 - steps[0].response, 0)] + steps[1:]
    state_flipped = advance_through(model, flipped)
    assert model.query(state, 0) != model.query(state_flipped, 0)


def test_attention_query_slides_last_context_window():
    # with context_len=m the query sees exactly the last m-1 steps
    m = 8
    model = SAKT(4, dim=8, n_heads=2, n_blocks=1, context_len=m, seed=4)
    rng = np.random.default_rng(4)
    steps = fake_steps(rng, 4, 20)
    state = advance_through(model, steps)
    # flipping a step outside the window changes nothing
    outside = [ExpandedStep(s.item_id, s.group_id, 1 - s.response if i == 0 else s.response, s.source_position)
               for i, s in enumerate(steps)]
    state_outside = advance_through(model, outside)
    assert model.query(state, 1) == model.query(state_outside, 1)
    # flipping a step inside the window does change the query
    inside = [ExpandedStep(s.item_id, s.group_id, 1 - s.response if i == 19 else s.response, s.source_position)
              for i, s in enumerate(steps)]
    state_inside = advance_through(model, inside)
    assert model.query(state, 1) != model.query(state_inside, 1)


@pytest.mark.parametrize("model", all_models(), ids=lambda m: f"{m.arch}{getattr(m,'n_blocks','')}")
def test_short_sequences_identical_to_plain_advance(model):
    rng = np.random.default_rng(5)
    steps = fake_steps(rng, model.n_items, model.context_len - 2)
    state_a = advance_through(model, steps)
    state_b = model.init_state()
    for s in steps:
        state_b = model.advance(state_b, s.item_id, s.response)
    assert model.query(state_a, 2) == model.query(state_b, 2)


def test_dkt_has_no_per_item_representations():
    model = DKT(4, dim=8, context_len=8, seed=0)
    assert not model.supports_repr
    with pytest.raises(CapabilityError):
        model.query_repr(model.init_state(), 0)


def test_sakt_repr_route_matches_query():
    model = SAKT(4, dim=8, n_heads=2, n_blocks=1, context_len=8, seed=0)
    rng = np.random.default_rng(6)
    state = advance_through(model, fake_steps(rng, 4, 5))
    for item in range(4):
        r = model.query_repr(state, item)
        assert model.prob_from_repr(r) == model.query(state, item)


@pytest.mark.parametrize("model", all_models()[:2], ids=lambda m: m.arch)
def test_soft_advance_interpolates_between_hard_advances(model):
    state = model.init_state()
    hard0 = model.query(model.advance(state, 1, 0), 2)
    hard1 = model.query(model.advance(state, 1, 1), 2)
    soft = model.query(model.advance_soft(state, 1, 1.0), 2)
    assert soft == pytest.approx(hard1, abs=1e-12)
    mid = model.query(model.advance_soft(state, 1, 0.5), 2)
    lo, hi = sorted([hard0, hard1])
    # interpolated embedding lands between (not necessarily midway)
    assert lo - 0.2 < mid < hi + 0.2


def test_baseline_constant_rate():
    base = MeanRateBaseline(5).fit([1, 1, 1, 0])
    state = base.init_state()
    assert base.query(state, 0) == 0.75
    state = base.advance(state, 0, 1)
    assert base.query(state, 3) == 0.75


def test_make_model_registry_and_unknown_tag():
    model = make_model("dkt+", 7, context_len=16, dim=8, lambda_r=0.1)
    assert model.plus.lambda_r == 0.1
    with pytest.raises(ValueError, match="unknown model tag"):
        make_model("dkvmn", 7)


@pytest.mark.parametrize("tag,kwargs", [
    ("dkt", {"dim": 8}),
    ("dkt+", {"dim": 8, "lambda_r": 0.05, "lambda_w1": 0.3, "lambda_w2": 3.0}),
    ("sakt", {"dim": 8, "n_heads": 2, "n_blocks": 2}),
])
def test_checkpoint_round_trip(tmp_path, tag, kwargs):
    model = make_model(tag, 6, context_len=10, seed=5, **kwargs)
    rng = np.random.default_rng(7)
    for p in model.parameters().values():
        p += rng.normal(0, 0.01, p.shape)  # make sure we are not saving init
    path = tmp_path / "model.npz"
    save_checkpoint(model, path)
    loaded = load_checkpoint(path)
    assert loaded.arch == model.arch
    assert loaded.hyperparameters() == model.hyperparameters()
    for k, v in model.parameters().items():
        assert (loaded.parameters()[k] == v).all()
    steps = fake_steps(np.random.default_rng(8), 6, 7)
    sa = advance_through(model, steps)
    sb = advance_through(loaded, steps)
    assert model.query(sa, 1) == loaded.query(sb, 1)


def test_snapshot_restores_exact_bytes():
    model = DKT(5, dim=4, context_len=6, seed=0)
    snap = model.snapshot()
    model.E += 1.0
    model.load_snapshot(snap)
    assert (model.E == snap["E"]).all()

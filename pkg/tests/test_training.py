import numpy as np
import pytest

from motifrank import autograd as ag
from motifrank.autograd import AdamState, Tape
from motifrank.errors import ValidationError
from motifrank.loss import combined_loss
from motifrank.pipeline import RunConfig, SplitConfig, prepare, with_train
from motifrank.synthetic import SyntheticSpec, simulate_market
from motifrank.training import (Model, TrainConfig, build_relation_context, grid_search, load_checkpoint,
                                model_from_checkpoint, save_checkpoint, train)


@pytest.fixture(scope="module")
def tiny():
    market = simulate_market(SyntheticSpec(seed=5, n=3, days=40))
    cfg = RunConfig(TrainConfig(seed=0, window=2, hidden=16, epochs=1), split=SplitConfig(34, 37))
    return cfg, prepare(market.bundle, cfg)


@pytest.fixture(scope="module")
def small():
    market = simulate_market(SyntheticSpec(seed=3, n=12, days=120, noise=0.0005))
    cfg = RunConfig(TrainConfig(seed=3, window=4, hidden=16, epochs=4))
    return cfg, prepare(market.bundle, cfg)


def test_one_epoch_smoke(tiny):
    cfg, prep = tiny
    model, hist = train(cfg.train, prep.dataset, prep.context)
    assert len(hist.train_loss) == len(hist.val_loss) == len(hist.val_irr) == len(hist.val_mrr) == 1
    assert hist.best_epoch == 0


def test_same_seed_bitwise_identical(tiny):
    cfg, prep = tiny
    c = with_train(cfg, epochs=2).train
    a, ha = train(c, prep.dataset, prep.context)
    b, hb = train(c, prep.dataset, prep.context)
    assert ha.train_loss == hb.train_loss and ha.val_irr == hb.val_irr
    for k, v in a.state().items():
        assert np.array_equal(v, b.state()[k])
    other, _ = train(with_train(cfg, epochs=2, seed=1).train, prep.dataset, prep.context)
    assert any(not np.array_equal(v, other.state()[k]) for k, v in a.state().items())


def test_training_never_reads_test_days(small):
    cfg, prep = small
    prep.dataset.access.clear()
    train(cfg.train, prep.dataset, prep.context)
    assert prep.dataset.access["test"] == 0
    assert prep.dataset.access["train"] > 0 and prep.dataset.access["validation"] > 0


def test_single_day_loss_decreases_monotonically():
    market = simulate_market(SyntheticSpec(seed=2, n=6, days=60, noise=0.0))
    cfg = RunConfig(TrainConfig(seed=0, window=4, hidden=16))
    prep = prepare(market.bundle, cfg)
    X, y = prep.features.X[0], prep.features.y[0]
    model = Model.init(cfg.train, X.shape[-1], prep.context.channels)
    params, opt = model.parameters(), AdamState(lr=0.001)
    losses = []
    for _ in range(50):
        ag.zero_grads(params)
        with Tape() as tape:
            loss = combined_loss(model.forward(X, prep.context), y, 1.0)
        tape.backward(loss)
        ag.adam_step(params, opt)
        losses.append(loss.item())
    assert all(b < a for a, b in zip(losses, losses[1:]))


def test_grid_one_cell_and_sabotage(small):
    cfg, prep = small
    one = grid_search({"hidden": [16]}, with_train(cfg, epochs=1).train, prep.dataset, prep.context)
    assert one.best.hidden == 16 and len(one.cells) == 1
    res = grid_search({"lr": [0.0, 0.01]}, cfg.train, prep.dataset, prep.context)
    assert res.best.lr == 0.01
    assert set(res.sensitivity["lr"]) == {"0.0", "0.01"}


def test_grid_repeats_report_mean_and_std(tiny):
    cfg, prep = tiny
    res = grid_search({"heads": [1]}, cfg.train, prep.dataset, prep.context, seeds=range(5))
    cell = res.cells[0]
    assert len(cell["val_irr"]) == 5
    assert cell["val_irr_mean"] == pytest.approx(np.mean(cell["val_irr"]), abs=1e-15)
    assert cell["val_irr_std"] == pytest.approx(np.std(cell["val_irr"]), abs=1e-15)
    with pytest.raises(ValidationError):
        grid_search({"heads": []}, cfg.train, prep.dataset, prep.context)


def test_config_validation():
    with pytest.raises(ValidationError, match="grid"):
        TrainConfig(seed=0, hidden=17)
    assert TrainConfig(seed=0, hidden=17, off_grid=True).hidden == 17
    with pytest.raises(ValidationError):
        TrainConfig(seed=None)
    with pytest.raises(ValidationError, match="unknown"):
        TrainConfig.from_dict({"seed": 0, "bogus": 1})
    c = TrainConfig(seed=4, motifs=("m4",))
    assert TrainConfig.from_dict(c.to_dict()) == c and c.motifs == ("M4",)


def test_relation_context_scales_motif_channels(small):
    _, prep = small
    ctx = prep.context
    motif_idx = [k for k, n in enumerate(ctx.channel_names) if n.startswith("motif:")]
    assert "motif:M4" in ctx.channel_names
    for k in motif_idx:
        assert ctx.raw[:, :, k].max() == 1.0
    wiki = prep.bundle.wiki
    ind = prep.bundle.industry
    bare = build_relation_context(wiki, ind, motifs=())
    assert bare.channels == wiki.values.shape[2] + ind.values.shape[2]


def test_checkpoint_round_trip(tiny, tmp_path):
    cfg, prep = tiny
    model, _ = train(cfg.train, prep.dataset, prep.context)
    d1 = save_checkpoint(tmp_path / "a.json", model, cfg.train, prep.context)
    d2 = save_checkpoint(tmp_path / "b.json", model, cfg.train, prep.context)
    assert d1 == d2 and (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()
    state, config, body = load_checkpoint(tmp_path / "a.json")
    assert config == cfg.train and body["motifs"] == list(prep.context.motifs)
    again, _ = model_from_checkpoint(tmp_path / "a.json", prep.features.X.shape[-1], prep.context)
    X = prep.features.X[0]
    assert np.array_equal(again.forward(X, prep.context).data, model.forward(X, prep.context).data)
    (tmp_path / "bad.json").write_text('{"format": "other"}')
    with pytest.raises(ValidationError):
        load_checkpoint(tmp_path / "bad.json")

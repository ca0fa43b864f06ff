"""Quick end-to-end check of the Python bindings."""

import math
import tempfile

import tracklink


def main():
    assert tracklink.iou((0, 0, 10, 10), (0, 0, 10, 10)) == 1.0
    assert math.isclose(tracklink.giou((0, 0, 1, 1), (2, 0, 1, 1)), -1 / 3, abs_tol=1e-12)
    assert tracklink.solve_assignment([[1.0, 2.0], [None, 0.5]]) == [(0, 0), (1, 1)]

    cfg = tracklink.Config()
    cfg.set("synth.frame_count=80")
    cfg.set("synth.num_identities=4")
    cfg.set("train.max_steps=5")
    try:
        cfg.set("stage1.nope=1")
    except ValueError as e:
        assert "nope" in str(e)
    else:
        raise AssertionError("unknown key accepted")

    train = tracklink.Sequence.synthetic(0, cfg)
    test = tracklink.Sequence.synthetic(1, cfg)
    model, losses = tracklink.Model.train([train], cfg)
    assert losses and all(math.isfinite(l) for l in losses)

    with tempfile.TemporaryDirectory() as d:
        model.save(f"{d}/model.bin")
        model = tracklink.Model.load(f"{d}/model.bin")
        test.save(f"{d}/seq")
        test = tracklink.Sequence.load(f"{d}/seq")

    tracklets = tracklink.track(test, cfg)
    trajectories, counts = model.associate(tracklets, test.fps, cfg)
    assert counts[0] == len(tracklets)
    assert all(a >= b for a, b in zip(counts, counts[1:]))
    report = tracklink.evaluate_tracks(test, trajectories)
    assert 0.0 <= report["idf1"] <= 1.0
    print(f"{test!r}: {len(tracklets)} tracklets -> {len(trajectories)} trajectories, IDF1 {report['idf1']:.3f}")


if __name__ == "__main__":
    main()

import numpy as np
import pytest
from PIL import Image

from cnnfix import cli
from cnnfix import io as fio
from cnnfix.fixtures import make_blob_detector, make_blob_image, SplitMix64
from cnnfix.graph import save_model
from cnnfix.metrics import iou
from cnnfix.postprocess import BoundingBox


@pytest.fixture
def blob_setup(tmp_path):
    model = tmp_path / "model"
    save_model(make_blob_detector(), model)
    rng = SplitMix64(0)
    samples = [make_blob_image(rng, q) for q in range(4)]
    paths = []
    for q, s in enumerate(samples):
        p = tmp_path / f"q{q}.png"
        fio.write_gray(p, s.image)
        paths.append(str(p))
    return tmp_path, str(model), paths, samples


def test_infer_top_left_is_class_zero(blob_setup, capsys):
    _, model, paths, _ = blob_setup
    assert cli.main(["infer", "--model", model, "--image", paths[0]]) == 0
    out = capsys.readouterr().out
    assert "q0.png: class 0" in out
    assert len(out.splitlines()[1].split()) == 2 + 4


def test_infer_bad_inputs(blob_setup, capsys):
    tmp, model, paths, _ = blob_setup
    assert cli.main(["infer", "--model", model, "--image", str(tmp / "none.png")]) == 3
    (tmp / "bad.json").write_text("{")
    assert cli.main(["infer", "--model", str(tmp / "bad.json"), "--image", paths[0]]) == 3
    assert "error" in capsys.readouterr().err
    with pytest.raises(SystemExit) as exc:
        cli.main(["infer", "--model", model])
    assert exc.value.code == 2
    with pytest.raises(SystemExit) as exc:
        cli.main(["heatmap", "--model", model, "--image", paths[0], "--min-fraction", "2"])
    assert exc.value.code == 2


def test_fixate_writes_points_inside_image(blob_setup):
    tmp, model, paths, _ = blob_setup
    out = tmp / "fx"
    assert cli.main(["fixate", "--model", model, "--image", *paths, "--out", str(out),
                     "--overlay"]) == 0
    for q in range(4):
        pts, meta = fio.parse_points((out / f"q{q}.fixations.txt").read_text())
        assert len(pts) > 0
        assert ((pts >= 0) & (pts < 64)).all()
        assert meta["predicted_class"] == str(q)
        overlay = np.asarray(Image.open(out / f"q{q}.fixations.png"))
        assert overlay.shape == (64, 64, 3)


def test_fixate_from_input_pixel_is_one_point(blob_setup):
    tmp, model, paths, _ = blob_setup
    out = tmp / "one"
    assert cli.main(["fixate", "--model", model, "--image", paths[1], "--out", str(out),
                     "--start", "layer:input coord:0,5,6"]) == 0
    pts, _ = fio.parse_points((out / "q1.fixations.txt").read_text())
    assert pts.tolist() == [[5, 6]]


def test_default_and_explicit_start_give_identical_files(blob_setup):
    tmp, model, paths, _ = blob_setup
    cli.main(["fixate", "--model", model, "--image", paths[2], "--out", str(tmp / "a")])
    cli.main(["fixate", "--model", model, "--image", paths[2], "--out", str(tmp / "b"),
              "--start", "layer:prob coord:2"])
    assert (tmp / "a" / "q2.fixations.txt").read_bytes() == \
        (tmp / "b" / "q2.fixations.txt").read_bytes()


def test_bad_start_selector(blob_setup):
    tmp, model, paths, _ = blob_setup
    assert cli.main(["fixate", "--model", model, "--image", paths[0], "--out", str(tmp),
                     "--start", "prob 2"]) == 2
    assert cli.main(["fixate", "--model", model, "--image", paths[0], "--out", str(tmp),
                     "--start", "layer:prob coord:9"]) == 3


def test_heatmap_peak_is_255(blob_setup):
    tmp, model, paths, _ = blob_setup
    out = tmp / "hm"
    assert cli.main(["heatmap", "--model", model, "--image", paths[0], "--out", str(out),
                     "--overlay"]) == 0
    hm = np.asarray(Image.open(out / "q0.heatmap.png"))
    assert hm.shape == (64, 64) and hm.max() == 255
    assert np.asarray(Image.open(out / "q0.heatmap_overlay.png")).shape == (64, 64, 3)


def test_bbox_matches_generator_box(blob_setup, capsys):
    tmp, model, paths, samples = blob_setup
    out = tmp / "bb"
    assert cli.main(["bbox", "--model", model, "--image", *paths, "--out", str(out)]) == 0
    for q, s in enumerate(samples):
        box = BoundingBox(*(int(v) for v in (out / f"q{q}.bbox.txt").read_text().split()))
        assert iou(box, s.box) >= 0.5
    assert "q0.png:" in capsys.readouterr().out


def test_failure_leaves_no_partial_output(blob_setup):
    tmp, model, paths, _ = blob_setup
    out = tmp / "partial"
    rc = cli.main(["heatmap", "--model", model, "--image", paths[0], str(tmp / "gone.png"),
                   "--out", str(out)])
    assert rc == 3
    assert not out.exists()


def _dataset(tmp, count):
    assert cli.main(["make-fixture", "blob", "--seed", "3", "--count", str(count),
                     "--out", str(tmp / "data")]) == 0
    return tmp / "data"


def test_eval_perfect_run_reports_zero(tmp_path, capsys):
    data = _dataset(tmp_path, 6)
    model = str(data / "model")
    cli.main(["bbox", "--model", model, "--image", *map(str, sorted((data / "images").iterdir())),
              "--out", str(tmp_path / "pred")])
    ann = tmp_path / "perfect"
    cli.main(["infer", "--model", model, "--image",
              *map(str, sorted((data / "images").iterdir()))])
    lines = capsys.readouterr().out.splitlines()
    classes = {l.split(":")[0]: int(l.split()[-1]) for l in lines if " class " in l}
    for name, cls in classes.items():
        stem = name.rsplit(".", 1)[0]
        box = (tmp_path / "pred" / f"{stem}.bbox.txt").read_text().split()
        fio.write_text(ann / f"{stem}.txt", f"{cls} {' '.join(box)}\n")
    report = tmp_path / "report.txt"
    assert cli.main(["eval", "--model", model, "--images", str(data / "images"),
                     "--annotations", str(ann), "--report", str(report)]) == 0
    text = report.read_text()
    assert "localization_error: 0.00" in text
    assert "mean_recall: 1.00" in text and "mean_precision: 1.00" in text


def test_eval_fixture_dataset_error_at_most_ten(tmp_path, capsys):
    data = _dataset(tmp_path, 200)
    capsys.readouterr()
    masks = tmp_path / "masks"
    for ann in sorted((data / "annotations").iterdir()):
        _, (box,) = fio.read_annotation(ann)
        mask = np.zeros((64, 64))
        mask[box.x_min:box.x_max + 1, box.y_min:box.y_max + 1] = 1.0
        fio.write_gray(masks / f"{ann.stem}.png", mask)
    assert cli.main(["eval", "--model", str(data / "model"), "--images", str(data / "images"),
                     "--annotations", str(data / "annotations"), "--masks", str(masks)]) == 0
    report = dict(line.split(": ") for line in capsys.readouterr().out.splitlines())
    assert report["images"] == "200"
    assert float(report["localization_error"]) <= 10.0
    assert float(report["classification_accuracy"]) >= 99.0
    assert 0.0 <= float(report["eer_precision"]) <= 100.0


def test_eval_errors(tmp_path, capsys):
    data = _dataset(tmp_path, 2)
    empty = tmp_path / "empty"
    empty.mkdir()
    model = str(data / "model")
    assert cli.main(["eval", "--model", model, "--images", str(empty),
                     "--annotations", str(data / "annotations")]) == 3
    assert "no images" in capsys.readouterr().err
    (data / "annotations" / "blob_0001.txt").write_text("garbage\n")
    assert cli.main(["eval", "--model", model, "--images", str(data / "images"),
                     "--annotations", str(data / "annotations")]) == 3
    assert "blob_0001.txt" in capsys.readouterr().err


@pytest.mark.parametrize("kind", cli.FIXTURE_KINDS)
def test_make_fixture_kinds(tmp_path, kind):
    assert cli.main(["make-fixture", kind, "--seed", "1", "--count", "2",
                     "--out", str(tmp_path)]) == 0
    assert (tmp_path / "model" / "model.json").is_file()
    images = sorted((tmp_path / "images").iterdir())
    assert images
    if kind != "toy-lstm":
        assert cli.main(["infer", "--model", str(tmp_path / "model"),
                         "--image", str(images[0])]) == 0
    assert cli.main(["fixate", "--model", str(tmp_path / "model"), "--image", str(images[0]),
                     "--out", str(tmp_path / "fx")]) == 0

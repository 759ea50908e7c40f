"""Top-level acceptance checks.

Each test covers one advertised guarantee end to end, enforces the stated
numeric tolerance and time budget, and prints exactly one

    [acceptance] <name>: PASS|FAIL (<detail>)

line that bypasses pytest's capture, so a plain `pytest -v` run shows the
scorecard inline.
"""

import time
import warnings

import numpy as np
from click.testing import CliRunner

from conftest import make_image, random_points
from crowdbg.annotations import build_foreground_mask, gaussian_density_map
from crowdbg.cli import main as cli_main
from crowdbg.gridio import read_density, read_mask, write_density, write_mask
from crowdbg.grids import BinaryMask, DensityMap, masked_count, sequential_sum
from crowdbg.losses import LossConfig, combined_loss, sigmoid
from crowdbg.metrics import EvalPair, decomposition_report, game
from crowdbg.toymodel.experiment import ExperimentConfig, bs_experiment
from crowdbg.toymodel.model import (
    ToyModelParams,
    TrainConfig,
    _forward_trace,
    init_params,
    load_params,
    loss_and_gradients,
    save_params,
)
from crowdbg.toymodel.scenes import SyntheticScene


def report(capsys, name, ok, detail):
    with capsys.disabled():
        print(f"[acceptance] {name}: {'PASS' if ok else 'FAIL'} ({detail})")
    assert ok, f"{name}: {detail}"


def random_eval_pair(rng, image_id, h=24, w=24, sigma=2.5):
    n = int(rng.integers(0, 5))
    img = make_image(image_id, w, h, random_points(rng, w, h, n))
    sizes = rng.uniform(2.0, 12.0, size=n).tolist()
    pred = DensityMap(rng.uniform(0.0, 0.2, size=(h, w)))
    return img, sizes, EvalPair(image_id, pred, img, sizes)


def test_error_decomposition_holds_across_200_images(capsys):
    """Foreground + background counts recompose the full-image count, and
    the full-image MAE never exceeds the sum of the per-region MAEs."""
    start = time.perf_counter()
    rng = np.random.default_rng(2024)
    pairs = []
    worst_split = 0.0
    for i in range(200):
        img, sizes, pair = random_eval_pair(rng, f"img-{i:04d}")
        pairs.append(pair)
        fg = build_foreground_mask(img, sizes, 2.0)
        bg = fg.complement()
        c_full = pair.predicted.total()
        c_parts = masked_count(pair.predicted, fg) + masked_count(pair.predicted, bg)
        rel = abs(c_parts - c_full) / max(1.0, abs(c_full))
        worst_split = max(worst_split, rel)
    rep = decomposition_report(pairs, alpha=2.0, sigma=2.5)
    elapsed = time.perf_counter() - start
    ok = (worst_split <= 1e-9
          and rep.mae_full <= rep.mae_bg + rep.mae_fg + 1e-12
          and rep.n_images == 200
          and elapsed < 10.0)
    report(capsys, "count decomposition", ok,
           f"200 images, worst split error {worst_split:.2e}, "
           f"slack {rep.slack:.3g}, {elapsed:.2f}s")


def test_density_maps_sum_to_the_point_count(capsys):
    """100 point sets on 256x256 grids, borders and corners included:
    every map integrates to N within 1e-6 * N."""
    start = time.perf_counter()
    rng = np.random.default_rng(7)
    side = 256
    layouts = [
        [(0.0, 0.0), (255.0, 0.0), (0.0, 255.0), (255.0, 255.0)],  # corners
        [(0.0, 128.0), (255.0, 128.0), (128.0, 0.0), (128.0, 255.0)],  # edges
        [],  # empty set: the map must be exactly zero
    ]
    while len(layouts) < 100:
        n = int(rng.integers(1, 51))
        pts = random_points(rng, side, side, n)
        # push a couple of points onto the border for good measure
        if n >= 2:
            pts[0] = (0.0, pts[0][1])
            pts[1] = (pts[1][0], float(side - 1))
        layouts.append(pts)
    worst = 0.0
    ok = True
    for i, pts in enumerate(layouts):
        img = make_image(f"n{i}", side, side, pts)
        total = gaussian_density_map(img, sigma=15.0).total()
        n = len(pts)
        if n == 0:
            ok = ok and total == 0.0
        else:
            err = abs(total - n)
            worst = max(worst, err / n)
            ok = ok and err < 1e-6 * n
    elapsed = time.perf_counter() - start
    ok = ok and elapsed < 10.0
    report(capsys, "density normalization", ok,
           f"100 sets, worst relative error {worst:.2e}, {elapsed:.2f}s")


def test_counts_match_brute_force_loops_exactly(capsys):
    """1000 random grids up to 32x32: sequential totals and masked counts
    equal a naive double loop bit for bit."""
    start = time.perf_counter()
    rng = np.random.default_rng(99)
    mismatches = 0
    for _ in range(1000):
        h = int(rng.integers(1, 33))
        w = int(rng.integers(1, 33))
        values = rng.uniform(-5.0, 5.0, size=(h, w))
        bits = rng.integers(0, 2, size=(h, w)).astype(np.uint8)
        acc = 0.0
        macc = 0.0
        for j in range(h):
            for k in range(w):
                acc += values[j, k]
                if bits[j, k]:
                    macc += values[j, k]
        if sequential_sum(values) != acc:
            mismatches += 1
        if masked_count(DensityMap(values), BinaryMask(bits)) != macc:
            mismatches += 1
    elapsed = time.perf_counter() - start
    ok = mismatches == 0 and elapsed < 30.0
    report(capsys, "loop-oracle equivalence", ok,
           f"1000 grids, {mismatches} mismatches, {elapsed:.2f}s")


def test_grid_partition_error_grows_with_resolution(capsys):
    """100 grid pairs with sides divisible by 16: the partition error is
    nondecreasing across levels 0..3 and level 0 equals |count difference|
    to 1e-12."""
    start = time.perf_counter()
    rng = np.random.default_rng(5)
    ok = True
    worst_gap = 0.0
    for _ in range(100):
        h = int(rng.choice([16, 32, 48]))
        w = int(rng.choice([16, 32, 48]))
        pred = DensityMap(rng.uniform(0, 1, size=(h, w)))
        gt = DensityMap(rng.uniform(0, 1, size=(h, w)))
        values = [game(pred, gt, level) for level in (0, 1, 2, 3)]
        level0_gap = abs(values[0] - abs(pred.total() - gt.total()))
        worst_gap = max(worst_gap, level0_gap)
        ok = ok and level0_gap <= 1e-12
        ok = ok and all(b >= a - 1e-12 for a, b in zip(values, values[1:]))
    elapsed = time.perf_counter() - start
    ok = ok and elapsed < 5.0
    report(capsys, "partition-error monotonicity", ok,
           f"100 pairs, worst level-0 gap {worst_gap:.2e}, {elapsed:.2f}s")


def _kink_distance(params, scene, cfg):
    tr = _forward_trace(params, scene.image, cfg.with_bs)
    pres = [tr.t_pre, tr.r1_pre, tr.r2_pre]
    if cfg.with_bs:
        pres += [tr.s1_pre, tr.s2_pre]
    closest = min(float(np.abs(p).min()) for p in pres)
    d_p = tr.d_int * sigmoid(tr.logits) if cfg.with_bs else tr.d_int
    return min(closest, float(np.abs(d_p - scene.gt_density.values).min()))


def _fd_scene(seed, h=12, w=12):
    rng = np.random.default_rng(seed)
    xy = [(float(rng.uniform(2, w - 3)), float(rng.uniform(2, h - 3)))
          for _ in range(2)]
    ann = make_image(f"fd-{seed}", w, h, xy, size_hints=[6.0, 6.0])
    return SyntheticScene(
        image_id=ann.image_id,
        image=rng.uniform(0.0, 1.0, size=(h, w)),
        annotation=ann,
        sizes=tuple(max(p.size_hint, 15.0) for p in ann.points),
        gt_density=gaussian_density_map(ann, sigma=2.0),
    )


def test_gradients_match_finite_differences(capsys):
    """Central differences (step 1e-5) against the analytic gradients of
    the combined loss and of every model tensor, away from rectifier
    kinks: max relative error below 1e-4 over at least 100 coordinates."""
    start = time.perf_counter()
    step = 1e-5
    checked = 0
    worst = 0.0

    def rel_err(analytic, numeric):
        return abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-6)

    # Part 1: the loss itself, wrt both of its grid inputs.
    rng = np.random.default_rng(31)
    d_int = rng.uniform(0.0, 2.0, size=(6, 5))
    logits = rng.uniform(-3.0, 3.0, size=(6, 5))
    d_gt = rng.uniform(0.0, 2.0, size=(6, 5))
    diff = d_int * sigmoid(logits) - d_gt
    d_gt = np.where(np.abs(diff) < 1e-3, d_gt - 5e-3, d_gt)  # clear of |.| ties
    m_gt = rng.integers(0, 2, size=(6, 5)).astype(np.uint8)
    cfg_loss = LossConfig(lambda_=1e-4)

    def loss_total(di, lg):
        return combined_loss(DensityMap(di), lg, DensityMap(d_gt),
                             BinaryMask(m_gt), cfg_loss).total

    out = combined_loss(DensityMap(d_int), logits, DensityMap(d_gt),
                        BinaryMask(m_gt), cfg_loss)
    for grid, grad, place in ((d_int, out.grad_wrt_density_int, "d"),
                              (logits, out.grad_wrt_mask_logits, "z")):
        for flat in rng.choice(grid.size, size=10, replace=False):
            plus = grid.copy()
            minus = grid.copy()
            plus.flat[flat] += step
            minus.flat[flat] -= step
            if place == "d":
                numeric = (loss_total(plus, logits) - loss_total(minus, logits)) / (2 * step)
            else:
                numeric = (loss_total(d_int, plus) - loss_total(d_int, minus)) / (2 * step)
            worst = max(worst, rel_err(grad.flat[flat], numeric))
            checked += 1

    # Part 2: every parameter tensor of the full model on a 12x12 scene.
    scene = _fd_scene(0)
    cfg = TrainConfig(with_bs=True, lambda_=1e-4)
    params = init_params(7)
    assert _kink_distance(params, scene, cfg) > 1e-6
    _, grads = loss_and_gradients(params, scene, cfg)
    arrays = {n: a.copy() for n, a in params.items()}

    def model_total(name, flat, value):
        old = arrays[name].flat[flat]
        arrays[name].flat[flat] = value
        total = loss_and_gradients(ToyModelParams(**arrays), scene, cfg)[0].total
        arrays[name].flat[flat] = old
        return total

    coord_rng = np.random.default_rng(41)
    for name, arr in params.items():
        for flat in coord_rng.choice(arr.size, size=min(8, arr.size), replace=False):
            flat = int(flat)
            base = arr.flat[flat]
            numeric = (model_total(name, flat, base + step)
                       - model_total(name, flat, base - step)) / (2 * step)
            worst = max(worst, rel_err(grads[name].flat[flat], numeric))
            checked += 1

    elapsed = time.perf_counter() - start
    ok = checked >= 100 and worst < 1e-4 and elapsed < 60.0
    report(capsys, "gradient finite differences", ok,
           f"{checked} coordinates, max rel err {worst:.2e}, {elapsed:.2f}s")


def test_suppression_cuts_background_error(capsys):
    """Five paired runs: with suppression the median background MAE drops
    by at least 25%, the full-image MAE stays within 5%, and person-free
    scenes get a strictly lower median predicted count."""
    start = time.perf_counter()
    result = bs_experiment([1, 2, 3, 4, 5], setup=ExperimentConfig())
    med_with = result.medians["with_bs"]
    med_without = result.medians["no_bs"]
    elapsed = time.perf_counter() - start

    bg_ok = med_with["bg_mae"] <= 0.75 * med_without["bg_mae"]
    full_ok = med_with["full_mae"] <= 1.05 * med_without["full_mae"]
    purebg_ok = med_with["purebg_pred_count"] < med_without["purebg_pred_count"]
    ok = bg_ok and full_ok and purebg_ok and not result.excluded and elapsed < 300.0
    report(capsys, "background suppression", ok,
           f"bg {med_with['bg_mae']:.3f} vs {med_without['bg_mae']:.3f}, "
           f"full {med_with['full_mae']:.3f} vs {med_without['full_mae']:.3f}, "
           f"purebg {med_with['purebg_pred_count']:.3f} vs "
           f"{med_without['purebg_pred_count']:.3f}, {elapsed:.0f}s")


def test_dilation_sweep_masks_nest(capsys):
    """100 annotations: masks only grow along alpha = 1..6 and a fixed
    nonnegative prediction's background count never increases."""
    start = time.perf_counter()
    rng = np.random.default_rng(12)
    alphas = (1.0, 2.0, 3.0, 4.0, 5.0, 6.0)
    ok = True
    for i in range(100):
        h = int(rng.integers(16, 33))
        w = int(rng.integers(16, 33))
        n = int(rng.integers(1, 5))
        img = make_image(f"sw-{i}", w, h, random_points(rng, w, h, n))
        sizes = rng.uniform(2.0, 10.0, size=n).tolist()
        pred = DensityMap(rng.uniform(0.0, 1.0, size=(h, w)))
        previous = None
        prev_bg = None
        for alpha in alphas:
            mask = build_foreground_mask(img, sizes, alpha)
            if previous is not None:
                ok = ok and bool(np.all(previous.bits <= mask.bits))
            bg_count = masked_count(pred, mask.complement())
            if prev_bg is not None:
                ok = ok and bg_count <= prev_bg + 1e-12
            previous = mask
            prev_bg = bg_count
    elapsed = time.perf_counter() - start
    ok = ok and elapsed < 10.0
    report(capsys, "dilation monotonicity", ok, f"100 annotations, {elapsed:.2f}s")


def test_file_formats_round_trip_bit_exactly(capsys, tmp_path):
    """100 grids (0x0 and 1x1 included) plus model parameter files come
    back from disk byte for byte."""
    start = time.perf_counter()
    rng = np.random.default_rng(17)
    shapes = [(0, 0), (1, 1), (0, 9), (9, 0)] + [
        (int(rng.integers(1, 33)), int(rng.integers(1, 33))) for _ in range(96)
    ]
    failures = 0
    for i, (h, w) in enumerate(shapes):
        if i % 2 == 0:
            values = rng.uniform(-2.0, 8.0, size=(h, w)).astype(np.float32).astype(np.float64)
            path = tmp_path / f"g{i}.dmap"
            twin = tmp_path / f"g{i}b.dmap"
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")  # negative densities are intended here
                write_density(path, DensityMap(values))
                back = read_density(path)
                write_density(twin, back)
            if not (np.array_equal(back.values, values)
                    and path.read_bytes() == twin.read_bytes()):
                failures += 1
        else:
            bits = rng.integers(0, 2, size=(h, w)).astype(np.uint8)
            path = tmp_path / f"g{i}.mask"
            write_mask(path, BinaryMask(bits))
            back = read_mask(path)
            twin = tmp_path / f"g{i}b.mask"
            write_mask(twin, back)
            if not (np.array_equal(back.bits, bits)
                    and path.read_bytes() == twin.read_bytes()):
                failures += 1
    for seed in range(5):
        params = init_params(seed)
        path = tmp_path / f"m{seed}.tfcn"
        save_params(params, path)
        loaded = load_params(path)
        twin = tmp_path / f"m{seed}b.tfcn"
        save_params(loaded, twin)
        if not (all(np.array_equal(a, getattr(loaded, n)) for n, a in params.items())
                and path.read_bytes() == twin.read_bytes()):
            failures += 1
    elapsed = time.perf_counter() - start
    ok = failures == 0 and elapsed < 5.0
    report(capsys, "format round trips", ok,
           f"105 instances, {failures} failures, {elapsed:.2f}s")


def test_command_line_runs_are_reproducible(capsys, tmp_path):
    """The experiment report is byte-identical across reruns of one seed,
    and evaluation output does not depend on the worker count."""
    start = time.perf_counter()
    runner = CliRunner()

    exp_args = ["bs-experiment", "--seed", "7", "--n-seeds", "3", "--epochs", "1",
                "--n-train", "2", "--n-eval", "2", "--pure-background-every", "2",
                "--learning-rate", "1e-5"]
    out_a = tmp_path / "exp_a.csv"
    out_b = tmp_path / "exp_b.csv"
    res_a = runner.invoke(cli_main, exp_args + ["--out", str(out_a)])
    res_b = runner.invoke(cli_main, exp_args + ["--out", str(out_b)])
    experiment_ok = (res_a.exit_code == 0 and res_b.exit_code == 0
                     and out_a.read_bytes() == out_b.read_bytes())

    synth = runner.invoke(cli_main, ["synth", "--out-dir", str(tmp_path / "ds"),
                                     "--n", "6", "--seed", "3"])
    manifest = tmp_path / "ds" / "manifest.json"
    r1 = tmp_path / "r1.csv"
    r8 = tmp_path / "r8.csv"
    e1 = runner.invoke(cli_main, ["eval", "--manifest", str(manifest), "--sigma", "2.5",
                                  "--jobs", "1", "--out", str(r1)])
    e8 = runner.invoke(cli_main, ["eval", "--manifest", str(manifest), "--sigma", "2.5",
                                  "--jobs", "8", "--out", str(r8)])
    eval_ok = (synth.exit_code == 0 and e1.exit_code == 0 and e8.exit_code == 0
               and r1.read_bytes() == r8.read_bytes())

    elapsed = time.perf_counter() - start
    ok = experiment_ok and eval_ok
    report(capsys, "run reproducibility", ok,
           f"experiment identical: {experiment_ok}, jobs-independent eval: "
           f"{eval_ok}, {elapsed:.1f}s")

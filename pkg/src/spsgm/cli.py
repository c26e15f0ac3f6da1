"""Command-line interface: ``spsgm <command> --config run.json``.

Every command reads the run config, the files produced by earlier commands
in the run's output directory, and the master seed; it writes its outputs
to the same directory. CSV outputs start with a ``# config_sha256=...``
comment line.

Typical order: ``eigsys`` -> ``project`` -> ``train`` -> ``sample`` ->
``evaluate`` / ``loglik``. ``quadratic-gen`` and ``ingest`` prepare data.
"""

from __future__ import annotations

import argparse
import io
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .config import RunConfig, apply_overrides
from .data import (
    FunctionalDataset,
    fmt,
    load_splits,
    long_csv_text,
    quadratic_generate,
)
from .diffusion import reverse_sample
from .eigensystem import (
    build_eigensystem,
    cumulative_ratio,
    dumps_eigensystem,
    load_eigensystem,
    select_truncation,
)
from .errors import InvalidConfigError, MissingArtifactError, SpsgmError
from .evaluation import SamplePool, SubsetSampler, functional_mmd, test_power
from .gp_baseline import gp_fit, gp_sample
from .kernels import KernelSpec
from .likelihood import function_log_density, model_coeff_log_density, standard_normal_logpdf
from .score_net import checkpoint_dict, load_checkpoint, train
from .seeding import make_rng
from .spectral import (
    coeffs_csv_text,
    dumps_meta,
    fit_mean,
    mean_from_meta,
    project,
    read_coeffs_csv,
    reconstruct_many,
    spectral_meta,
)

log = logging.getLogger("spsgm")

EIGSYS_FILE = "eigensystem.json"
SPECTRUM_FILE = "spectrum.csv"
COEFFS_FILE = "coefficients.csv"
SPECTRAL_FILE = "spectral.json"
CHECKPOINT_FILE = "checkpoint.json"
LOSS_FILE = "loss_history.csv"
SAMPLES_FILE = "samples.csv"
SAMPLE_COEFFS_FILE = "sample_coefficients.csv"
METRICS_FILE = "metrics.csv"
GP_FILE = "gp_model.json"
LOGLIK_FILE = "loglik.csv"


def _sha(text):
    import hashlib

    return hashlib.sha256(text.encode()).hexdigest()


class Run:
    """Lazily loaded state shared by the commands of one run."""

    def __init__(self, cfg, plot=True):
        self.cfg = cfg
        self.plot = plot
        self.out = cfg.out_dir
        self._splits = None

    # -- inputs ------------------------------------------------------------
    @property
    def splits(self):
        if self._splits is None:
            self._splits = load_splits(self.cfg.resolved_manifest())
        return self._splits

    def kernel_spec(self):
        data = self.splits.train if self.cfg.kernel.get("family") == "EmpiricalCovariance" else None
        return KernelSpec.from_dict(self.cfg.kernel, data=data)

    def require(self, name, producer):
        path = self.out / name
        if not path.exists():
            raise MissingArtifactError(
                f"{path} not found; run `spsgm {producer} --config <config>` first to create it"
            )
        return path

    def eigensystem(self):
        path = self.require(EIGSYS_FILE, "eigsys")
        text = path.read_text()
        data = self.splits.train if self.cfg.kernel.get("family") == "EmpiricalCovariance" else None
        return load_eigensystem(path, data=data), _sha(text)

    def truncation(self, es):
        return select_truncation(es, self.cfg.truncation)

    def spectral(self, es):
        M = self.truncation(es)
        mean = fit_mean(self.splits.train, es, self.cfg.mean)
        return project(self.splits.train, es, M, mean)

    def model(self):
        es, es_sha = self.eigensystem()
        net, meta = load_checkpoint(self.require(CHECKPOINT_FILE, "train"))
        if meta.get("eigensystem_sha256") != es_sha:
            raise InvalidConfigError(
                f"{CHECKPOINT_FILE} was trained on a different eigensystem; rerun `spsgm train`"
            )
        smeta = json.loads(self.require(SPECTRAL_FILE, "project").read_text())
        mean = mean_from_meta(smeta, es)
        return es, net, mean, int(meta["M"])

    # -- outputs -----------------------------------------------------------
    def write(self, name, text):
        self.out.mkdir(parents=True, exist_ok=True)
        (self.out / name).write_text(text)
        log.info("wrote %s", self.out / name)

    def csv(self, name, header, rows):
        buf = io.StringIO()
        buf.write(f"# {self.cfg.header()}\n")
        buf.write(",".join(header) + "\n")
        for row in rows:
            buf.write(",".join(fmt(v) if isinstance(v, (float, np.floating)) else str(v) for v in row) + "\n")
        self.write(name, buf.getvalue())

    def figure(self, func, name, *args, **kwargs):
        if not self.plot:
            return
        from . import plotting

        self.out.mkdir(parents=True, exist_ok=True)
        getattr(plotting, func)(self.out / name, *args, **kwargs)
        log.info("wrote %s", self.out / name)


# --------------------------------------------------------------------------
# Commands
# --------------------------------------------------------------------------


def cmd_eigsys(run, args):
    spec = run.kernel_spec()
    norm = "dataset" if run.cfg.normalize_inputs else None
    es = build_eigensystem(spec, run.splits.train, normalization=norm)
    M = run.truncation(es)
    run.write(EIGSYS_FILE, dumps_eigensystem(es))
    ratio = cumulative_ratio(es.eigenvalues)
    rows = [(m, es.eigenvalues[m], ratio[m], int(m <= M)) for m in range(es.size)]
    run.csv(SPECTRUM_FILE, ["m", "eigenvalue", "cumulative_ratio", "retained"], rows)
    run.figure("plot_spectrum", "spectrum.svg", es.eigenvalues, M)
    print(f"eigensystem: S={es.S} positive eigenvalues={es.size} M={M}")


def _write_projection(run, es, es_sha):
    sd = run.spectral(es)
    run.write(COEFFS_FILE, coeffs_csv_text(sd.coeffs, run.cfg.header()))
    run.write(SPECTRAL_FILE, dumps_meta(spectral_meta(sd, EIGSYS_FILE, es_sha)))
    return sd


def cmd_project(run, args):
    es, es_sha = run.eigensystem()
    sd = _write_projection(run, es, es_sha)
    print(f"projected {sd.coeffs.shape[0]} train functions onto {sd.M + 1} components")


def cmd_train(run, args):
    es, es_sha = run.eigensystem()
    sd = _write_projection(run, es, es_sha)
    tcfg = run.cfg.train_config()
    net, hist = train(sd.coeffs, sd.eigenvalues, tcfg, run.cfg.diffusion)
    meta = checkpoint_dict(net, tcfg, run.cfg.diffusion, es_sha, sd.M)
    run.write(CHECKPOINT_FILE, json.dumps(meta, indent=1) + "\n")
    val = dict(hist.val_loss)
    rows = [(0, "", val[0])] if 0 in val else []
    rows += [(i + 1, loss, val.get(i + 1, "")) for i, loss in enumerate(hist.train_loss)]
    run.csv(LOSS_FILE, ["iteration", "train_loss", "val_loss"], rows)
    run.figure("plot_loss", "loss.svg", hist.train_loss, hist.val_loss)
    last = hist.val_loss[-1][1] if hist.val_loss else float("nan")
    print(f"trained {tcfg.iterations} iterations; final validation loss {last:.6g}")


def _draw(run, net, dim, count, stream):
    return reverse_sample(net, run.cfg.diffusion, make_rng(run.cfg.seed, stream), count, dim)


def cmd_sample(run, args):
    es, net, mean, M = run.model()
    count = run.cfg.sample_count if args.count is None else args.count
    Z = _draw(run, net, M + 1, count, "sample")
    grid = es.anchor_points
    F = reconstruct_many(Z, es, mean, grid) if count else np.zeros((0, grid.shape[0]))
    ds = FunctionalDataset.from_grid(grid, F)
    run.write(SAMPLES_FILE, long_csv_text(ds, run.cfg.header()))
    run.write(SAMPLE_COEFFS_FILE, coeffs_csv_text(Z.reshape(count, M + 1), run.cfg.header()))
    if grid.shape[1] == 1 and count:
        run.figure("plot_samples", "samples.svg", grid[:, 0], F, run.splits.train.values)
    print(f"drew {count} functions on {grid.shape[0]} points")


def cmd_evaluate(run, args):
    es, net, mean, M = run.model()
    ecfg = run.cfg.evaluation_config()
    test = run.splits.test
    grid = test.grid
    pool = ecfg.num_tests * ecfg.samples_per_side
    seed = ecfg.seed

    Z = _draw(run, net, M + 1, pool, "evaluate-model")
    model_F = reconstruct_many(Z, es, mean, grid)
    gp = gp_fit(run.splits.train)
    run.write(GP_FILE, json.dumps(gp.to_dict(), indent=1) + "\n")
    gp_F = gp_sample(gp, grid, pool, seed=int(make_rng(seed, "gp").integers(2**63))).values
    if not np.array_equal(grid, gp.grid):
        gp_F = gp_F + mean(grid)[None, :]

    rows = []
    comparisons = [
        ("model_vs_test", lambda: SamplePool(model_F), model_F),
        ("gp_vs_test", lambda: SamplePool(gp_F), gp_F),
        ("null_train_vs_test", lambda: SubsetSampler(run.splits.train.values, seed), run.splits.train.values),
    ]
    for name, make_sampler, first in comparisons:
        res = test_power(make_sampler(), SubsetSampler(test.values, seed + 1), ecfg)
        k = min(len(first), len(test))
        mmd = functional_mmd(first[:k], test.values[:k], bandwidth=res.bandwidth)
        rows.append((name, res.power, res.stderr, mmd, res.bandwidth, ecfg.num_tests, ecfg.samples_per_side))
        print(f"{name}: power={res.power:.3f} stderr={res.stderr:.3f} mmd={mmd:.4g}")
    run.csv(
        METRICS_FILE,
        ["comparison", "power", "stderr", "mmd", "bandwidth", "num_tests", "samples_per_side"],
        rows,
    )


def cmd_loglik(run, args):
    es, es_sha = run.eigensystem()
    path = Path(args.samples) if args.samples else run.require(SAMPLE_COEFFS_FILE, "sample")
    if not path.exists():
        raise MissingArtifactError(f"coefficient file not found: {path}")
    Z = read_coeffs_csv(path)
    if args.density == "model":
        _, net, _, M = run.model()
        if Z.shape[1] != M + 1:
            raise InvalidConfigError(f"coefficients have {Z.shape[1]} columns, model expects {M + 1}")
        coeff = np.atleast_1d(model_coeff_log_density(net, Z, run.cfg.diffusion)) if len(Z) else []
    else:
        coeff = standard_normal_logpdf(Z) if len(Z) else []
    rows = []
    for i, (z, c) in enumerate(zip(Z, coeff)):
        rep = function_log_density(z, es, float(c))
        rows.append((i, rep.coeff_logpdf, rep.jacobian_term, rep.total))
    run.csv(LOGLIK_FILE, ["sample_id", "coeff_logpdf", "jacobian_term", "total"], rows)
    print(f"log densities for {len(rows)} functions ({args.density} coefficient density)")


def cmd_quadratic_gen(run, args):
    count = run.cfg.dataset.count if args.count is None else args.count
    ds = quadratic_generate(count, run.cfg.seed)
    run.write("quadratic.csv", long_csv_text(ds, run.cfg.header()))
    print(f"generated {count} quadratic functions")


def cmd_ingest(run, args):
    sp = run.splits
    for name, part, idx in zip(("train", "val", "test"), (sp.train, sp.val, sp.test), sp.indices):
        run.write(f"{name}.csv", long_csv_text(part, run.cfg.header(), ids=[str(i) for i in idx]))
    print(f"split sizes train={len(sp.train)} val={len(sp.val)} test={len(sp.test)}")


COMMANDS = {
    "eigsys": (cmd_eigsys, "build the eigensystem from the train split"),
    "project": (cmd_project, "project the train split onto the eigenbasis"),
    "train": (cmd_train, "project, then train the score network"),
    "sample": (cmd_sample, "draw functions from the trained model"),
    "evaluate": (cmd_evaluate, "two-sample test power for model, GP baseline and null"),
    "loglik": (cmd_loglik, "log density of sampled (or given) coefficient vectors"),
    "quadratic-gen": (cmd_quadratic_gen, "write a synthetic quadratic dataset"),
    "ingest": (cmd_ingest, "preprocess and split the configured dataset"),
}


def build_parser():
    parser = argparse.ArgumentParser(prog="spsgm", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="run config JSON (defaults: built-in quadratic run)")
        p.add_argument("--seed", type=int, help="master seed (overrides the config)")
        p.add_argument("--out", help="output directory (overrides the config)")
        p.add_argument("--count", type=int, help="number of functions to sample or generate")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config entry, e.g. train.iterations=2000")
        p.add_argument("--plot", action=argparse.BooleanOptionalAction, default=True,
                       help="write SVG figures next to the CSV outputs")
        p.add_argument("-v", "--verbose", action="store_true")
        if name == "loglik":
            p.add_argument("--samples", help="coefficient CSV (default: the run's sample_coefficients.csv)")
            p.add_argument("--density", choices=("model", "prior"), default="model",
                           help="coefficient density: trained model or standard normal prior")
    return parser


def load_config(args):
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise MissingArtifactError(f"config file not found: {path}")
        try:
            raw = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise InvalidConfigError(f"{path}: line {exc.lineno}: {exc.msg}") from exc
        base = path.parent
    else:
        raw, base = {}, Path(".")
    if args.seed is not None:
        raw["seed"] = args.seed
    if args.out is not None:
        raw["out"] = str(Path(args.out).resolve()) if not Path(args.out).is_absolute() else args.out
    raw = apply_overrides(raw, args.set)
    return RunConfig.from_dict(raw, base_dir=base)


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = load_config(args)
        if args.count is not None and args.count < 0:
            raise InvalidConfigError("--count must be non-negative")
        COMMANDS[args.command][0](Run(cfg, plot=args.plot), args)
    except SpsgmError as exc:
        print(f"spsgm {args.command}: error: {exc}", file=sys.stderr)
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())

"""Command-line front end.

Subcommands: train, sample, estimate, prior-eval, mc, exact.  Global
flags: --config, --seed, --out, --threads.  Reports are JSON on stdout,
streams are JSON Lines, configurations and couplings use the plain text
lattice format.

Configuration files hold one `key = value` pair per line; `#` starts a
comment and unknown keys are rejected.  Command-line flags override file
values.  All randomness flows from one master seed: SeedSequence(seed)
is split into four named sub-streams (train, sample, mc, bootstrap) and
each command draws only from its own.

Only the standard library is imported at module level so that --threads
can cap the BLAS thread pools before numpy loads.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

# key -> (type, default); None means the key is required when used
CONFIG_SCHEMA = {
    "experiment": (str, "run"),
    "length": (int, None),
    "kind": (str, "ising"),
    "coupling_seed": (int, 0),
    "coupling_file": (str, ""),
    "beta": (float, None),
    "order": (int, None),
    "hidden": (int, 0),
    "alpha": (float, 0.01),
    "batch_size": (int, 4096),
    "era_length": (int, 100),
    "era_count": (int, None),
    "learning_rate": (float, 1e-3),
    "seed": (int, 0),
    "sample_count": (int, 1 << 20),
    "out": (str, ""),
}

SEED_STREAMS = ("train", "sample", "mc", "bootstrap")


class CliError(Exception):
    pass


def parse_config_file(path: str) -> dict:
    """Read a key = value config file; typo keys and bad values are errors."""
    if not os.path.exists(path):
        raise CliError(f"config file not found: {path}")
    values: dict = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, eq, value = line.partition("=")
            key = key.strip()
            value = value.strip()
            if not eq or not key or not value:
                raise CliError(f"{path}:{lineno}: expected 'key = value', got {raw.rstrip()!r}")
            if key not in CONFIG_SCHEMA:
                raise CliError(f"{path}:{lineno}: unknown config key {key!r}")
            kind = CONFIG_SCHEMA[key][0]
            try:
                values[key] = kind(value)
            except ValueError as exc:
                raise CliError(f"{path}:{lineno}: bad value for {key}: {value!r}") from exc
    return values


def resolve_config(args: argparse.Namespace, required: tuple = ()) -> dict:
    """Merge schema defaults, the config file and flag overrides."""
    cfg = {key: default for key, (_, default) in CONFIG_SCHEMA.items()}
    if getattr(args, "config", None):
        cfg.update(parse_config_file(args.config))
    for key in CONFIG_SCHEMA:
        flag = getattr(args, key, None)
        if flag is not None:
            cfg[key] = flag
    for key in required:
        if cfg.get(key) is None:
            raise CliError(f"missing required setting {key!r} (config file or flag)")
    if cfg["kind"] not in ("ising", "ea"):
        raise CliError(f"unknown model kind {cfg['kind']!r}")
    return cfg


def seed_stream(cfg_seed: int, name: str):
    """Named child SeedSequence of the master seed."""
    import numpy as np

    children = np.random.SeedSequence(cfg_seed).spawn(len(SEED_STREAMS))
    return children[SEED_STREAMS.index(name)]


def _format_config(cfg: dict) -> str:
    lines = [
        f"{key} = {cfg[key]}"
        for key in sorted(cfg)
        if cfg[key] is not None and cfg[key] != ""
    ]
    return "\n".join(lines) + "\n"


def _make_couplings(cfg: dict, geometry):
    from .lattice import load_couplings, make_couplings

    if cfg["kind"] == "ising":
        return make_couplings("ferromagnetic", geometry)
    if cfg["coupling_file"]:
        couplings = load_couplings(cfg["coupling_file"])
        if couplings.geometry.length != geometry.length:
            raise CliError(
                f"coupling file {cfg['coupling_file']} has L={couplings.geometry.length}, "
                f"expected {geometry.length}"
            )
        return couplings
    return make_couplings("ea-binary", geometry, seed=cfg["coupling_seed"])


def _checkpoint_couplings(ckpt_path: str, spec, meta: dict, coupling_file: str):
    """Coupling field for a loaded checkpoint: explicit file, recorded path, or uniform."""
    from .lattice import load_couplings, make_couplings

    if coupling_file:
        return load_couplings(coupling_file)
    if spec.kind == "ising":
        return make_couplings("ferromagnetic", spec.geometry)
    recorded = meta.get("couplings", "")
    candidate = os.path.join(os.path.dirname(os.path.abspath(ckpt_path)), recorded)
    if recorded and os.path.exists(candidate):
        return load_couplings(candidate)
    raise CliError(
        f"checkpoint {ckpt_path} needs its coupling field; pass --coupling-file"
    )


def _emit(report: dict, out: str) -> None:
    text = json.dumps(report, indent=2, sort_keys=True)
    print(text)
    if out:
        from .arnet import write_atomic

        write_atomic(out, text + "\n")


def cmd_train(args: argparse.Namespace) -> int:
    import numpy as np

    from .arnet import rng_state_string, save_checkpoint, write_atomic
    from .lattice import LatticeGeometry, save_couplings
    from .priors import make_prior
    from .trainer import TrainConfig, TrainingDiverged, train

    cfg = resolve_config(args, required=("length", "beta", "order", "era_count"))
    run_dir = args.out or cfg["out"] or os.path.join("runs", cfg["experiment"])
    os.makedirs(run_dir, exist_ok=True)
    geometry = LatticeGeometry(cfg["length"])
    couplings = _make_couplings(cfg, geometry)
    coupling_name = "couplings.txt"
    save_couplings(os.path.join(run_dir, coupling_name), couplings)
    cfg["out"] = run_dir
    write_atomic(os.path.join(run_dir, "config.txt"), _format_config(cfg))

    train_seed = int(seed_stream(cfg["seed"], "train").generate_state(1)[0])
    train_cfg = TrainConfig(
        length=cfg["length"],
        kind=cfg["kind"],
        order=cfg["order"],
        beta=cfg["beta"],
        era_count=cfg["era_count"],
        hidden=cfg["hidden"] or None,
        batch_size=cfg["batch_size"],
        era_length=cfg["era_length"],
        learning_rate=cfg["learning_rate"],
        alpha=cfg["alpha"],
        seed=train_seed,
    )
    spec = make_prior(
        cfg["kind"], cfg["order"], cfg["beta"], geometry,
        couplings if cfg["kind"] == "ea" else None,
    )
    metrics_path = os.path.join(run_dir, "metrics.jsonl")
    lines: list[str] = []

    def on_metrics(record) -> None:
        lines.append(json.dumps(record.to_dict()))

    def on_era(era: int, params, rng: np.random.Generator) -> None:
        save_checkpoint(
            os.path.join(run_dir, f"ckpt-era-{era}.txt"),
            params,
            spec,
            rng_state=rng_state_string(rng),
            coupling_path=coupling_name,
        )
        write_atomic(metrics_path, "".join(line + "\n" for line in lines))

    try:
        params, metrics = train(train_cfg, couplings, on_metrics=on_metrics, on_era=on_era)
    except TrainingDiverged as exc:
        raise CliError(f"training diverged: {exc}") from exc
    summary = {
        "run_dir": run_dir,
        "updates": len(metrics),
        "eras": cfg["era_count"],
    }
    if metrics:
        summary["final_f_q"] = metrics[-1].f_q
        summary["final_ess"] = metrics[-1].ess
    print(json.dumps(summary, indent=2, sort_keys=True))
    return 0


def cmd_sample(args: argparse.Namespace) -> int:
    import tempfile

    import numpy as np

    from .arnet import load_checkpoint
    from .sampler import ancestral_sample

    cfg = resolve_config(args)
    params, spec, meta = load_checkpoint(args.ckpt)
    couplings = _checkpoint_couplings(args.ckpt, spec, meta, cfg["coupling_file"])
    count = cfg["sample_count"]
    out_path = args.out or cfg["out"] or "samples.txt"
    rng = np.random.default_rng(seed_stream(cfg["seed"], "sample"))
    chunk = 1 << 14
    total_log_q = 0.0
    total_be = 0.0
    done = 0
    directory = os.path.dirname(os.path.abspath(out_path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".samples-")
    try:
        with os.fdopen(fd, "w") as fh:
            while done < count:
                m = min(chunk, count - done)
                batch = ancestral_sample(params, spec, couplings, m, rng)
                for row in batch.spins:
                    fh.write(" ".join(str(int(s)) for s in row) + "\n")
                total_log_q += float(batch.log_q.sum())
                total_be += spec.beta * float(batch.energies.sum())
                done += m
        os.replace(tmp, out_path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    report = {
        "file": out_path,
        "count": count,
        "beta": spec.beta,
        "kind": spec.kind,
        "order": spec.order,
        "f_q": (total_log_q + total_be) / count,
    }
    print(json.dumps(report, indent=2, sort_keys=True))
    return 0


def cmd_estimate(args: argparse.Namespace) -> int:
    import numpy as np

    from .arnet import load_checkpoint, log_prob
    from .estimators import estimate_report
    from .lattice import load_configurations, magnetization
    from .sampler import SampleBatch, ancestral_sample

    cfg = resolve_config(args)
    params, spec, meta = load_checkpoint(args.ckpt)
    couplings = _checkpoint_couplings(args.ckpt, spec, meta, cfg["coupling_file"])
    count = cfg["sample_count"]
    rng = np.random.default_rng(seed_stream(cfg["seed"], "sample"))
    boot_rng = np.random.default_rng(seed_stream(cfg["seed"], "bootstrap"))
    chunk = 1 << 14
    log_q = np.empty(count)
    energies = np.empty(count)
    mags = np.empty(count)
    done = 0
    while done < count:
        m = min(chunk, count - done)
        batch = ancestral_sample(params, spec, couplings, m, rng)
        log_q[done : done + m] = batch.log_q
        energies[done : done + m] = batch.energies
        mags[done : done + m] = magnetization(batch.spins)
        done += m
    mc_configs = None
    mc_log_q = None
    if args.mc_file:
        try:
            mc_configs = load_configurations(args.mc_file, spec.geometry)
        except ValueError as exc:
            raise CliError(
                f"sample file {args.mc_file} does not match the checkpoint "
                f"geometry (L={spec.geometry.length}): {exc}"
            ) from exc
        parts = [
            log_prob(params, spec, mc_configs[k : k + chunk])
            for k in range(0, mc_configs.shape[0], chunk)
        ]
        mc_log_q = np.concatenate(parts)
    placeholder = SampleBatch(
        spins=np.zeros((0, spec.geometry.n_sites), dtype=np.int8),
        log_q=log_q,
        energies=energies,
    )
    report = estimate_report(
        placeholder,
        spec.beta,
        spec.kind,
        spec.order,
        couplings,
        mc_configs=mc_configs,
        mc_log_q=mc_log_q,
        resamples=args.resamples,
        rng=boot_rng,
        mags=mags,
    )
    _emit(report.to_dict(), args.out or cfg["out"])
    return 0


def cmd_prior_eval(args: argparse.Namespace) -> int:
    from .lattice import LatticeGeometry
    from .priors import make_prior, prior_only_f_q

    cfg = resolve_config(args, required=("length", "beta", "order"))
    geometry = LatticeGeometry(cfg["length"])
    couplings = _make_couplings(cfg, geometry)
    spec = make_prior(
        cfg["kind"], cfg["order"], cfg["beta"], geometry,
        couplings if cfg["kind"] == "ea" else None,
    )
    mean, err = prior_only_f_q(
        spec, couplings, cfg["sample_count"], seed=seed_stream(cfg["seed"], "sample")
    )
    _emit(
        {
            "kind": cfg["kind"],
            "order": cfg["order"],
            "beta": cfg["beta"],
            "length": cfg["length"],
            "sample_count": cfg["sample_count"],
            "f_q": mean,
            "f_q_err": err,
        },
        args.out or cfg["out"],
    )
    return 0


def cmd_mc(args: argparse.Namespace) -> int:
    import numpy as np

    from .lattice import LatticeGeometry, save_configurations
    from .mcbaseline import (
        TemperingLadder,
        UnsupportedModelError,
        geometric_ladder,
        metropolis_run,
        parallel_tempering_run,
        wolff_run,
    )

    cfg = resolve_config(args, required=("length", "beta"))
    geometry = LatticeGeometry(cfg["length"])
    couplings = _make_couplings(cfg, geometry)
    seed = seed_stream(cfg["seed"], "mc")
    configs_out: list | None = [] if args.save_configs else None
    summary: dict = {
        "algo": args.algo,
        "length": cfg["length"],
        "beta": cfg["beta"],
        "kind": cfg["kind"],
        "samples": args.samples,
        "burn_in": args.burn_in,
        "thin": args.thin,
    }
    try:
        if args.algo == "wolff":
            energies, mags, _ = wolff_run(
                couplings, cfg["beta"], updates=args.samples * args.thin, seed=seed,
                burn_in=args.burn_in, thin=args.thin, configs_out=configs_out,
            )
        elif args.algo == "metropolis":
            energies, mags, _ = metropolis_run(
                couplings, cfg["beta"], sweeps=args.samples * args.thin, seed=seed,
                burn_in=args.burn_in, thin=args.thin, configs_out=configs_out,
            )
        else:
            ladder = TemperingLadder(geometric_ladder(cfg["beta"], count=args.rungs))
            result = parallel_tempering_run(
                ladder, couplings, sweeps=args.samples * args.thin, seed=seed,
                burn_in=args.burn_in, thin=args.thin,
                record_rung=args.rungs - 1 if args.save_configs else None,
            )
            energies = result.energies[args.rungs - 1]
            mags = result.magnetizations[args.rungs - 1]
            if configs_out is not None:
                configs_out = list(result.configs)
            summary["swap_rates"] = [round(float(r), 4) for r in result.swap_rates]
    except UnsupportedModelError as exc:
        raise CliError(str(exc)) from exc
    if args.save_configs:
        save_configurations(args.save_configs, np.array(configs_out, dtype=np.int8))
        summary["configs_file"] = args.save_configs
    summary["mean_energy"] = float(energies.mean())
    summary["mean_abs_magnetization"] = float(np.abs(mags).mean())
    print(json.dumps(summary, indent=2, sort_keys=True), file=sys.stderr)
    stream_lines = [
        json.dumps({"sample": k, "energy": e, "magnetization": m})
        for k, (e, m) in enumerate(zip(energies.tolist(), mags.tolist()))
    ]
    out_path = args.out or cfg["out"]
    if out_path:
        from .arnet import write_atomic

        write_atomic(out_path, "".join(line + "\n" for line in stream_lines))
    else:
        for line in stream_lines:
            print(line)
    return 0


def cmd_exact(args: argparse.Namespace) -> int:
    from .exact import ENUMERATION_LIMIT, enumerate_boltzmann, kaufman_free_energy
    from .lattice import LatticeGeometry

    cfg = resolve_config(args, required=("length", "beta"))
    geometry = LatticeGeometry(cfg["length"])
    report: dict = {"length": cfg["length"], "beta": cfg["beta"], "kind": cfg["kind"]}
    if cfg["kind"] == "ising":
        report["f_kaufman"] = kaufman_free_energy(cfg["length"], cfg["beta"])
    if geometry.n_sites <= ENUMERATION_LIMIT:
        couplings = _make_couplings(cfg, geometry)
        result = enumerate_boltzmann(couplings, cfg["beta"])
        report["f_enumeration"] = result.free_energy
        report["mean_energy"] = result.mean_energy
        report["mean_abs_magnetization"] = result.mean_abs_magnetization
    elif cfg["kind"] == "ea":
        raise CliError(
            f"ea model has no closed form; enumeration is limited to "
            f"{ENUMERATION_LIMIT} sites and L={cfg['length']} has {geometry.n_sites}"
        )
    _emit(report, args.out or cfg["out"])
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value configuration file")
    common.add_argument("--seed", type=int, help="master seed (overrides config)")
    common.add_argument("--out", help="output file or run directory (overrides config)")
    common.add_argument("--threads", type=int, help="cap BLAS thread pools")

    parser = argparse.ArgumentParser(
        prog="spinvan",
        description="variational autoregressive sampling of 2d spin models",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", parents=[common], help="train a model from a config file")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sample", parents=[common], help="draw configurations from a checkpoint")
    p.add_argument("--ckpt", required=True, help="checkpoint file")
    p.add_argument("--count", type=int, dest="sample_count", help="number of configurations")
    p.add_argument("--coupling-file", dest="coupling_file", help="coupling field override")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("estimate", parents=[common], help="free-energy estimators for a checkpoint")
    p.add_argument("--ckpt", required=True, help="checkpoint file")
    p.add_argument("--samples", type=int, dest="sample_count", help="model samples to draw")
    p.add_argument("--mc-file", help="Boltzmann configurations for F_mc and w_bar")
    p.add_argument("--resamples", type=int, default=1000, help="bootstrap resamples")
    p.add_argument("--coupling-file", dest="coupling_file", help="coupling field override")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("prior-eval", parents=[common], help="prior-only variational free energy")
    p.add_argument("--order", type=int, help="expansion order 0..4")
    p.add_argument("--beta", type=float, help="inverse temperature")
    p.add_argument("--L", type=int, dest="length", help="lattice side")
    p.add_argument("--samples", type=int, dest="sample_count", help="sample count")
    p.add_argument("--kind", choices=("ising", "ea"), help="model kind")
    p.add_argument("--coupling-seed", type=int, dest="coupling_seed", help="ea disorder seed")
    p.add_argument("--coupling-file", dest="coupling_file", help="coupling field file")
    p.set_defaults(func=cmd_prior_eval)

    p = sub.add_parser("mc", parents=[common], help="classical Monte Carlo baselines")
    p.add_argument("--algo", choices=("wolff", "metropolis", "tempering"), default="wolff")
    p.add_argument("--L", type=int, dest="length", help="lattice side")
    p.add_argument("--beta", type=float, help="inverse temperature")
    p.add_argument("--kind", choices=("ising", "ea"), help="model kind")
    p.add_argument("--coupling-seed", type=int, dest="coupling_seed", help="ea disorder seed")
    p.add_argument("--coupling-file", dest="coupling_file", help="coupling field file")
    p.add_argument("--samples", type=int, default=10000, help="retained samples")
    p.add_argument("--burn-in", type=int, default=10000, help="discarded updates or sweeps")
    p.add_argument("--thin", type=int, default=10, help="updates or sweeps per retained sample")
    p.add_argument("--rungs", type=int, default=16, help="tempering ladder size")
    p.add_argument("--save-configs", help="write retained configurations to this file")
    p.set_defaults(func=cmd_mc)

    p = sub.add_parser("exact", parents=[common], help="exact free energy oracles")
    p.add_argument("--L", type=int, dest="length", help="lattice side")
    p.add_argument("--beta", type=float, help="inverse temperature")
    p.add_argument("--kind", choices=("ising", "ea"), help="model kind")
    p.add_argument("--coupling-seed", type=int, dest="coupling_seed", help="ea disorder seed")
    p.add_argument("--coupling-file", dest="coupling_file", help="coupling field file")
    p.set_defaults(func=cmd_exact)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "threads", None):
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = str(args.threads)
    from .arnet import CheckpointError

    try:
        return args.func(args)
    except BrokenPipeError:
        os.dup2(os.open(os.devnull, os.O_WRONLY), sys.stdout.fileno())
        return 0
    except (CliError, CheckpointError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

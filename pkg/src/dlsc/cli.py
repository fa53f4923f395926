"""``dlsc`` command line.

Every subcommand resolves its parameters as built-in defaults, overridden by
an optional ``--config`` key=value file, overridden by flags. The resolved
configuration and SHA-256 checksums of every input and output are written to
a JSON manifest next to the outputs. Outputs are written atomically.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from dataclasses import dataclass
from pathlib import Path

from . import __version__
from .connectivity import (
    connectivity_map,
    emphasis_profile,
    emphasis_to_csv,
    load_pairs,
    load_regions,
    load_report,
    save_pairs,
    save_regions,
)
from .core import (
    DlscError,
    DlscParams,
    ParseError,
    atomic_write_text,
    format_float,
    load_signal_matrix,
    save_coefficients,
    save_dictionary,
    save_signal_matrix,
)
from .paradigm import (
    HrfSpec,
    canonical_hrf,
    default_motor_paradigm,
    load_paradigm,
    save_paradigm,
)
from .pipeline import (
    ContrastScorer,
    TruthErrorScorer,
    dlsc_denoise,
    frange,
    grid_search,
)
from .synth import default_phantom_spec, generate_phantom, snr_db
from .tnlm import TnlmParams, load_coordinates, tnlm_denoise

log = logging.getLogger("dlsc")

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_USAGE = 2
EXIT_PARSE = 3
EXIT_IO = 4
EXIT_CONSTRAINT = 5
EXIT_INVALID = 6
EXIT_NUMERICAL = 7

_CATEGORY_EXIT = {
    "usage": EXIT_USAGE,
    "parse": EXIT_PARSE,
    "io": EXIT_IO,
    "constraint": EXIT_CONSTRAINT,
    "invalid": EXIT_INVALID,
    "degenerate": EXIT_NUMERICAL,
    "undefined": EXIT_NUMERICAL,
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


@dataclass(frozen=True)
class Opt:
    name: str
    type: type
    default: object = None
    help: str = ""
    required: bool = False

    @property
    def key(self):
        return self.name.replace("-", "_")


def _range(text: str) -> list:
    """``a:b:step`` inclusive, or a comma list."""
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise ValueError(f"range must be start:stop:step, got {text!r}")
        return frange(*(float(p) for p in parts))
    return [float(p) for p in text.split(",")]


HRF_OPTS = [
    Opt("peak-delay", float, 6.0),
    Opt("undershoot-delay", float, 16.0),
    Opt("peak-dispersion", float, 1.0),
    Opt("undershoot-dispersion", float, 1.0),
    Opt("undershoot-ratio", float, 6.0),
    Opt("kernel-length", float, 32.0),
    Opt("oversample", int, 16),
]

COMMANDS = {
    "denoise": [
        Opt("input", str, required=True, help="signal matrix (.csv or binary)"),
        Opt("paradigm", str, help="paradigm CSV; built-in motor paradigm if omitted"),
        Opt("k", int, 400, "dictionary size K"),
        Opt("lambda", int, 40, "sparsity per voxel"),
        Opt("cth", float, 0.1, "correlation threshold for training voxels"),
        Opt("iters", int, 30, "K-SVD iterations"),
        Opt("seed", int, 0),
        Opt("out-format", str, "binary", "denoised matrix format: binary or csv"),
        Opt("out", str, required=True, help="output directory"),
        *HRF_OPTS,
    ],
    "grid": [
        Opt("input", str, required=True),
        Opt("paradigm", str),
        Opt("k", _range, "300:500:100"),
        Opt("k-scale", float, 1.0, "multiply every K by this factor (rounded)"),
        Opt("lambda", _range, "5:50:5"),
        Opt("cth", _range, "0.1:0.4:0.1"),
        Opt("iters", int, 30),
        Opt("seed", int, 0),
        Opt("scorer", str, "contrast", "contrast or truth-mse"),
        Opt("seeds", str, help="seed regions CSV (contrast scorer)"),
        Opt("targets", str, help="target regions CSV (contrast scorer)"),
        Opt("pairs", str, help="seed,target,kind CSV (contrast scorer)"),
        Opt("clean", str, help="clean matrix (truth-mse scorer)"),
        Opt("out", str, required=True, help="report CSV"),
        *HRF_OPTS,
    ],
    "tnlm": [
        Opt("input", str, required=True),
        Opt("distance", int, 11),
        Opt("smoothing", float, 0.72),
        Opt("coords", str, help="x,y,z CSV; linear layout if omitted"),
        Opt("out", str, required=True),
    ],
    "connect": [
        Opt("input", str, required=True),
        Opt("seeds", str, required=True),
        Opt("targets", str, required=True),
        Opt("out", str, required=True),
    ],
    "compare": [
        Opt("raw", str, required=True),
        Opt("denoised", str, required=True),
        Opt("out", str, required=True),
    ],
    "phantom": [
        Opt("n-frames", int, 284),
        Opt("tr", float, 0.72),
        Opt("n-voxels", int, 2000),
        Opt("task-community-size", int, 150),
        Opt("rest-community-size", int, 100),
        Opt("task-amplitude", float, 1.0),
        Opt("latent-amplitude", float, 0.7),
        Opt("snr-db", float, -3.0, "target SNR; ignored when noise-sigma > 0"),
        Opt("noise-sigma", float, 0.0),
        Opt("drift-order", int, 0),
        Opt("spike-rate", float, 0.0),
        Opt("region-size", int, 1),
        Opt("seed", int, 0),
        Opt("paradigm", str),
        Opt("out-format", str, "binary"),
        Opt("out", str, required=True, help="output directory"),
    ],
    "hrf-dump": [
        Opt("tr", float, 0.72, "sampling interval of the dump"),
        Opt("out", str, required=True),
        *HRF_OPTS,
    ],
}

# keys naming files the subcommand reads (checksummed into the manifest)
INPUT_KEYS = ("input", "paradigm", "seeds", "targets", "pairs", "clean", "coords", "raw", "denoised")


def read_config_file(path) -> dict:
    """Flat ``key=value`` text; ``#`` starts a comment; keys accept - or _."""
    values = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise OSError(f"cannot read config {path}: {exc}") from exc
    for row_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError(f"expected key=value, got {raw!r}", path, row=row_no)
        key, value = (s.strip() for s in line.split("=", 1))
        values[key.replace("-", "_")] = value
    return values


def _build_parser() -> _Parser:
    parser = _Parser(prog="dlsc", description="DLSC denoising and connectivity toolkit")
    parser.add_argument("--version", action="version", version=f"dlsc {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="progress on stderr")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    for command, opts in COMMANDS.items():
        p = sub.add_parser(command, help=f"{command} subcommand")
        p.add_argument("--version", action="version", version=f"dlsc {__version__}")
        names = ["--config", "--spec"] if command == "phantom" else ["--config"]
        p.add_argument(*names, dest="config", help="key=value file; flags take precedence")
        p.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)
        for opt in opts:
            p.add_argument(
                f"--{opt.name}",
                dest=opt.key,
                default=argparse.SUPPRESS,
                help=opt.help + (f" (default {opt.default})" if opt.default is not None else ""),
            )
    return parser


def resolve_config(command: str, flags: dict, config_path: str | None) -> dict:
    opts = {opt.key: opt for opt in COMMANDS[command]}
    merged = {key: opt.default for key, opt in opts.items()}
    if config_path:
        for key, value in read_config_file(config_path).items():
            if key not in opts:
                raise UsageError(f"unknown config key {key!r} for {command}")
            merged[key] = value
    merged.update(flags)
    resolved = {}
    for key, opt in opts.items():
        value = merged[key]
        if value is None:
            if opt.required:
                raise UsageError(f"missing required option --{opt.name}")
            resolved[key] = None
            continue
        if isinstance(value, str) or opt.type is _range:
            try:
                value = opt.type(value) if isinstance(value, str) else value
            except ValueError as exc:
                raise UsageError(f"--{opt.name}: {exc}") from None
        resolved[key] = value
    return resolved


def _sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


def _write_manifest(path, command, config, outputs):
    inputs = {
        key: {"path": config[key], "sha256": _sha256(config[key])}
        for key in INPUT_KEYS
        if config.get(key)
    }
    manifest = {
        "tool": "dlsc",
        "version": __version__,
        "command": command,
        "config": {k: v for k, v in sorted(config.items())},
        "inputs": inputs,
        "outputs": {Path(p).name: _sha256(p) for p in sorted(outputs, key=str)},
    }
    atomic_write_text(path, json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _hrf(cfg) -> HrfSpec:
    return HrfSpec(
        cfg["peak_delay"],
        cfg["undershoot_delay"],
        cfg["peak_dispersion"],
        cfg["undershoot_dispersion"],
        cfg["undershoot_ratio"],
        cfg["kernel_length"],
        cfg["oversample"],
    )


def _paradigm(cfg):
    return load_paradigm(cfg["paradigm"]) if cfg.get("paradigm") else default_motor_paradigm()


def _out_dir(cfg) -> Path:
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _ext(fmt):
    if fmt not in ("binary", "csv"):
        raise UsageError(f"format must be binary or csv, got {fmt!r}")
    return ".bin" if fmt == "binary" else ".csv"


def cmd_denoise(cfg):
    signals = load_signal_matrix(cfg["input"])
    params = DlscParams(cfg["k"], cfg["lambda"], cfg["cth"], cfg["iters"], cfg["seed"])
    result = dlsc_denoise(signals, _paradigm(cfg), _hrf(cfg), params)
    out = _out_dir(cfg)
    files = [
        out / f"denoised{_ext(cfg['out_format'])}",
        out / "dictionary.csv",
        out / "coefficients.csv",
        out / "mask.csv",
        out / "trace.csv",
    ]
    save_signal_matrix(result.denoised, files[0], cfg["out_format"])
    save_dictionary(result.dictionary, files[1])
    save_coefficients(result.coefficients, files[2])
    mask_lines = ["voxel,selected"] + [
        f"{v},{int(m)}" for v, m in enumerate(result.training_mask)
    ]
    atomic_write_text(files[3], "\n".join(mask_lines) + "\n")
    result.trace.save(files[4])
    log.info("V_r = %d, final objective %.6g", result.training_mask.sum(),
             result.trace.objective_per_iteration[-1])
    return out / "manifest.json", files


def cmd_grid(cfg):
    signals = load_signal_matrix(cfg["input"])
    if cfg["scorer"] == "contrast":
        if not (cfg["seeds"] and cfg["targets"] and cfg["pairs"]):
            raise UsageError("contrast scorer needs --seeds, --targets and --pairs")
        high, low = load_pairs(cfg["pairs"])
        scorer = ContrastScorer(
            tuple(load_regions(cfg["seeds"])), tuple(load_regions(cfg["targets"])), high, low
        )
    elif cfg["scorer"] == "truth-mse":
        if not cfg["clean"]:
            raise UsageError("truth-mse scorer needs --clean")
        scorer = TruthErrorScorer(load_signal_matrix(cfg["clean"]).data)
    else:
        raise UsageError(f"unknown scorer {cfg['scorer']!r}")
    ks = [int(round(k * cfg["k_scale"])) for k in cfg["k"]]

    def progress(i, total, entry):
        log.info("grid point %d/%d %s: %s", i, total, entry.point,
                 "ok" if entry.ok else entry.error)

    report = grid_search(
        signals, _paradigm(cfg), _hrf(cfg), ks,
        [int(x) for x in cfg["lambda"]], cfg["cth"], scorer,
        ksvd_iterations=cfg["iters"], rng_seed=cfg["seed"], progress=progress,
    )
    out = Path(cfg["out"])
    out.parent.mkdir(parents=True, exist_ok=True)
    atomic_write_text(out, report.to_csv())
    return out.with_name(out.name + ".manifest.json"), [out]


def cmd_tnlm(cfg):
    signals = load_signal_matrix(cfg["input"])
    layout = load_coordinates(cfg["coords"]) if cfg.get("coords") else "linear"
    result = tnlm_denoise(signals, TnlmParams(cfg["distance"], cfg["smoothing"], layout))
    out = Path(cfg["out"])
    out.parent.mkdir(parents=True, exist_ok=True)
    save_signal_matrix(result, out)
    return out.with_name(out.name + ".manifest.json"), [out]


def cmd_connect(cfg):
    signals = load_signal_matrix(cfg["input"])
    report = connectivity_map(signals, load_regions(cfg["seeds"]), load_regions(cfg["targets"]))
    out = Path(cfg["out"])
    out.parent.mkdir(parents=True, exist_ok=True)
    report.save(out)
    return out.with_name(out.name + ".manifest.json"), [out]


def cmd_compare(cfg):
    profile = emphasis_profile(load_report(cfg["raw"]), load_report(cfg["denoised"]))
    out = Path(cfg["out"])
    out.parent.mkdir(parents=True, exist_ok=True)
    atomic_write_text(out, emphasis_to_csv(profile))
    return out.with_name(out.name + ".manifest.json"), [out]


def cmd_phantom(cfg):
    paradigm = load_paradigm(cfg["paradigm"]) if cfg.get("paradigm") else None
    spec = default_phantom_spec(
        rng_seed=cfg["seed"],
        snr_db_target=None if cfg["noise_sigma"] > 0 else cfg["snr_db"],
        n_frames=cfg["n_frames"],
        tr=cfg["tr"],
        n_voxels=cfg["n_voxels"],
        task_community_size=cfg["task_community_size"],
        rest_community_size=cfg["rest_community_size"],
        task_amplitude=cfg["task_amplitude"],
        latent_amplitude=cfg["latent_amplitude"],
        noise_sigma=cfg["noise_sigma"],
        drift_order=cfg["drift_order"],
        spike_rate=cfg["spike_rate"],
        region_size=cfg["region_size"],
        paradigm=paradigm,
    )
    truth = generate_phantom(spec)
    out = _out_dir(cfg)
    ext = _ext(cfg["out_format"])
    files = [
        out / f"noisy{ext}",
        out / f"clean{ext}",
        out / "paradigm.csv",
        out / "truth_dictionary.csv",
        out / "truth_coefficients.csv",
        out / "communities.csv",
        out / "seeds.csv",
        out / "targets.csv",
        out / "pairs.csv",
        out / "phantom_info.txt",
    ]
    save_signal_matrix(truth.noisy, files[0], cfg["out_format"])
    save_signal_matrix(truth.clean, files[1], cfg["out_format"])
    save_paradigm(spec.paradigm, files[2])
    save_dictionary(truth.true_dictionary, files[3])
    save_coefficients(truth.true_coefficients, files[4])
    names = truth.community_names
    lines = ["voxel,community"] + [
        f"{v},{names[c] if c >= 0 else ''}" for v, c in enumerate(truth.community_of_voxel)
    ]
    atomic_write_text(files[5], "\n".join(lines) + "\n")
    save_regions(truth.seeds, files[6])
    save_regions(truth.targets, files[7])
    save_pairs(truth.expected_high_pairs, truth.expected_low_pairs, files[8])
    info = [
        f"noise_sigma={format_float(spec.noise_sigma)}",
        f"snr_db={format_float(snr_db(truth.clean, truth.noisy))}",
    ]
    atomic_write_text(files[9], "\n".join(info) + "\n")
    return out / "manifest.json", files


def cmd_hrf_dump(cfg):
    h = canonical_hrf(_hrf(cfg), cfg["tr"])
    lines = ["time_seconds,value"] + [
        f"{format_float(i * cfg['tr'])},{format_float(x)}" for i, x in enumerate(h)
    ]
    out = Path(cfg["out"])
    out.parent.mkdir(parents=True, exist_ok=True)
    atomic_write_text(out, "\n".join(lines) + "\n")
    return out.with_name(out.name + ".manifest.json"), [out]


HANDLERS = {
    "denoise": cmd_denoise,
    "grid": cmd_grid,
    "tnlm": cmd_tnlm,
    "connect": cmd_connect,
    "compare": cmd_compare,
    "phantom": cmd_phantom,
    "hrf-dump": cmd_hrf_dump,
}


def _fail(category: str, message: str) -> int:
    text = " ".join(str(message).split())
    code = _CATEGORY_EXIT.get(category, EXIT_INTERNAL)
    print(f"dlsc: error category={category} exit={code}: {text}", file=sys.stderr)
    return code


def run(argv=None) -> int:
    """Dispatch one subcommand; returns the process exit status."""
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError(f"expected a subcommand: {', '.join(COMMANDS)}")
        logging.basicConfig(
            level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
            format="dlsc: %(message)s",
            stream=sys.stderr,
        )
        flags = {k: v for k, v in vars(args).items() if k not in ("command", "config", "verbose")}
        cfg = resolve_config(args.command, flags, args.config)
        manifest, outputs = HANDLERS[args.command](cfg)
        recorded = {k: (v if not isinstance(v, list) else list(v)) for k, v in cfg.items()}
        _write_manifest(manifest, args.command, recorded, outputs)
    except UsageError as exc:
        return _fail("usage", exc)
    except DlscError as exc:
        return _fail(getattr(exc, "category", "invalid"), exc)
    except OSError as exc:
        return _fail("io", exc)
    except (ValueError, KeyError) as exc:
        return _fail("invalid", exc)
    return EXIT_OK


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()

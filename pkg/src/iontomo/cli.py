"""Command-line runner: simulate, reconstruct, bootstrap, modes, pipeline.

Every configuration key can be given in a JSON file (--config) and
overridden by a flag with the same dotted name, e.g. ``--shots 100`` or
``--noise.gate_dephasing 0.02``. Flag values are parsed as JSON when
possible, so ``--bootstrap.shots null`` works.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
import warnings
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from . import core
from .boot import BootstrapConfig, bias_study, resample_fidelities, write_report
from .circuit import PhaseLedger
from .detect import CountResponse, DataError, Dataset, simulate_dataset
from .motion import ChainConfig, ChainError, DEFAULT_DETUNING, TWO_PI, axial_modes, gate_phases
from .noise import NoiseModel
from .pipeline import (Sequences, fidelity_report, ideal_process, magnitude_grid_csv,
                       reconstruct_pair, simulate_pair, single_qubit_fidelities, summary_table)
from .tomo import ConvergenceWarning, LikelihoodModel, MleOptions, result_document

log = logging.getLogger("iontomo")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NONCONVERGED = 0, 2, 3, 4


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    shots: int = 350
    output_dir: str = "out"
    pipeline: str = "full"  # "full" or "quick" (no bootstrap)
    detuning_hz: float = DEFAULT_DETUNING / TWO_PI
    noise: NoiseModel = field(default_factory=NoiseModel.calibrated)
    response: CountResponse = field(default_factory=CountResponse)
    mle: MleOptions = field(default_factory=MleOptions)
    likelihood_mode: str = "counts"
    bootstrap: BootstrapConfig = field(default_factory=BootstrapConfig)
    chain: ChainConfig = field(default_factory=ChainConfig)

    def __post_init__(self):
        if self.shots < 1:
            raise ValueError("shots must be >= 1")
        if self.pipeline not in ("full", "quick"):
            raise ValueError(f"unknown pipeline {self.pipeline!r}")
        LikelihoodModel(self.response, self.likelihood_mode)

    def likelihood(self) -> LikelihoodModel:
        return LikelihoodModel(self.response, self.likelihood_mode)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = dict(d)
        known = {f.name: f for f in fields(cls)}
        unknown = set(d) - set(known)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        nested = {"noise": NoiseModel, "response": CountResponse, "mle": MleOptions,
                  "bootstrap": BootstrapConfig, "chain": ChainConfig}
        for key, typ in nested.items():
            if key in d and isinstance(d[key], dict):
                d[key] = typ.from_dict(d[key])
        return cls(**d)


def default_config_dict() -> dict:
    text = resources.files("iontomo").joinpath("default_config.json").read_text()
    return json.loads(text)


def _leaf_keys(d: dict, prefix: str = "") -> list[str]:
    keys = []
    for k, v in d.items():
        if isinstance(v, dict):
            keys += _leaf_keys(v, f"{prefix}{k}.")
        else:
            keys.append(prefix + k)
    return keys


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _set_dotted(d: dict, key: str, value) -> None:
    parts = key.split(".")
    for p in parts[:-1]:
        d = d.setdefault(p, {})
    d[parts[-1]] = value


def load_config(args: argparse.Namespace) -> RunConfig:
    doc = default_config_dict()
    if args.config:
        try:
            user = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
        _merge(doc, user)
    for key in _leaf_keys(RunConfig().to_dict()):
        val = getattr(args, "cfg:" + key, None)
        if val is not None:
            _set_dotted(doc, key, _parse_value(val))
    try:
        return RunConfig.from_dict(doc)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def _merge(base: dict, new: dict) -> None:
    for k, v in new.items():
        if isinstance(v, dict) and isinstance(base.get(k), dict):
            _merge(base[k], v)
        else:
            base[k] = v


def _file_sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _write_json(path: Path, doc: dict) -> None:
    path.write_text(json.dumps(doc, indent=1, default=_json_default))
    log.info("wrote %s", path)


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if is_dataclass(o):
        return asdict(o)
    raise TypeError(f"not serializable: {type(o).__name__}")


def _outdir(cfg: RunConfig) -> Path:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


# -- subcommands ------------------------------------------------------------

def cmd_simulate(cfg: RunConfig, args) -> int:
    seqs = Sequences.build(PhaseLedger())
    if args.dump_sequence:
        print(seqs.u.dumps())
        return EXIT_OK
    out = _outdir(cfg)
    d_u, d_uu = simulate_pair(seqs, cfg.noise, cfg.response, cfg.shots, cfg.seed)
    for name, d in (("dataset_u.csv", d_u), ("dataset_uu.csv", d_uu)):
        d.metadata["config"] = cfg.to_dict()
        d.save(out / name)
        log.info("wrote %s (%d records)", out / name, len(d))
    print(json.dumps({"dataset_u": str(out / "dataset_u.csv"), "dataset_uu": str(out / "dataset_uu.csv"),
                      "records": [len(d_u), len(d_uu)]}))
    return EXIT_OK


def cmd_reconstruct(cfg: RunConfig, args) -> int:
    out = _outdir(cfg)
    paths = {"u": Path(args.u or out / "dataset_u.csv"), "uu": Path(args.uu or out / "dataset_uu.csv")}
    data = {}
    for key, path in paths.items():
        if not path.exists():
            raise DataError(f"dataset not found: {path}")
        data[key] = Dataset.load(path)
        data[key].check_complete()
    lm = cfg.likelihood()
    seqs = Sequences.build(PhaseLedger())
    r_u, r_uu = reconstruct_pair(data["u"], data["uu"], lm, cfg.mle)
    report = fidelity_report(r_u.process, r_uu.process, seqs)
    for key, r in (("u", r_u), ("uu", r_uu)):
        doc = result_document(r, data[key], lm, cfg.mle, {"config": cfg.to_dict()})
        _write_json(out / f"process_{key}.json", doc)
        (out / f"grid_{key}.csv").write_text(magnitude_grid_csv(r.process))
    report["converged"] = {"u": r_u.converged, "uu": r_uu.converged}
    report["inputs"] = {k: {"path": str(p), "sha256": _file_sha256(p)} for k, p in paths.items()}
    report["config"] = cfg.to_dict()
    _write_json(out / "report.json", report)
    print(json.dumps({k: report[k] for k in ("F_U", "fbar_U", "F_U2", "F_U2_over_F_UU", "fbar_UU_vs_U2")},
                     indent=1))
    return EXIT_OK if r_u.converged and r_uu.converged else EXIT_NONCONVERGED


def cmd_bootstrap(cfg: RunConfig, args) -> int:
    out = _outdir(cfg)
    path = Path(args.process or out / "process_u.json")
    if not path.exists():
        raise DataError(f"process file not found: {path}")
    e_hat = core.load_matrix(path)
    try:
        core.check_process(e_hat, psd_tol=-1e-7, tp_tol=1e-6)
    except core.ValidationError as exc:
        raise DataError(f"{path}: {exc}") from exc
    seqs = Sequences.build(PhaseLedger())
    lm = cfg.likelihood()
    fid = resample_fidelities(e_hat, ideal_process(seqs.u), cfg.response, cfg.bootstrap, lm, cfg.mle)
    bias = bias_study(e_hat, cfg.response, cfg.bootstrap, lm, cfg.mle)
    report = {"resample_fidelities": fid, "bias_study": bias}
    write_report(out / "bootstrap.json", report, cfg.bootstrap,
                 {"input": {"path": str(path), "sha256": _file_sha256(path)}, "run_config": cfg.to_dict()})
    log.info("wrote %s", out / "bootstrap.json")
    print(json.dumps({
        "F_U_mean": fid["entanglement_fidelity"]["mean"],
        "F_U_std_error": fid["entanglement_fidelity"]["std_error"],
        "bias_fbar_mean": bias["fidelity"]["mean"],
        "bias_fbar_std_error": bias["fidelity"]["std_error"],
    }, indent=1))
    ok = fid["all_converged"] and bias["all_converged"]
    return EXIT_OK if ok else EXIT_NONCONVERGED


def modes_report(cfg: RunConfig) -> dict:
    spec = axial_modes(cfg.chain)
    doc = {"chain": cfg.chain.to_dict(), **spec.to_dict()}
    try:
        doc["gate"] = gate_phases(cfg.chain, TWO_PI * cfg.detuning_hz).to_dict()
    except ChainError as exc:
        doc["gate_error"] = str(exc)
    return doc


def cmd_modes(cfg: RunConfig, args) -> int:
    doc = modes_report(cfg)
    if args.format == "csv":
        print("mode,frequency_hz,ratio," + ",".join(f"b{i + 1}" for i in range(cfg.chain.n_ions)))
        for m, (f, r) in enumerate(zip(doc["frequencies_hz"], doc["frequency_ratios"])):
            vec = ",".join(f"{x:.10f}" for x in np.asarray(doc["eigenvectors"])[:, m])
            print(f"{m + 1},{f:.3f},{r:.10f},{vec}")
        if "gate" in doc:
            print(f"# splitting_hz={doc['gate']['splitting_hz']:.1f} "
                  f"three_delta_hz={doc['gate']['three_delta_hz']:.1f} "
                  f"phase_ratio={doc['gate']['phase_ratio']:.6f}")
    else:
        print(json.dumps(doc, indent=1, default=_json_default))
    return EXIT_OK


def cmd_pipeline(cfg: RunConfig, args) -> int:
    out = _outdir(cfg)
    status = cmd_simulate(cfg, argparse.Namespace(dump_sequence=False))
    status = max(status, cmd_reconstruct(cfg, argparse.Namespace(u=None, uu=None)))
    report = json.loads((out / "report.json").read_text())
    values = {k: report[k] for k in ("F_U", "fbar_U", "F_U2", "F_U2_over_F_UU")}

    seqs = Sequences.build(PhaseLedger())
    single = simulate_dataset(seqs.single, cfg.noise, cfg.response, cfg.shots, cfg.seed + 1,
                              metadata={"sequence": "rotations only"})
    fbars, results = single_qubit_fidelities(single, seqs.single, cfg.likelihood(), cfg.mle)
    values["single_qubit_fbar"] = float(np.mean(fbars))
    if not all(r.converged for r in results):
        status = EXIT_NONCONVERGED

    if cfg.pipeline == "full":
        status = max(status, cmd_bootstrap(cfg, argparse.Namespace(process=None)))
        boot = json.loads((out / "bootstrap.json").read_text())
        values["bias_fbar"] = boot["bias_study"]["fidelity"]["mean"]
        values["F_U_bootstrap_std_error"] = boot["resample_fidelities"]["entanglement_fidelity"]["std_error"]

    modes = modes_report(cfg)
    if "gate" in modes:
        values["phase_ratio"] = modes["gate"]["phase_ratio"]
        values["splitting_hz"] = modes["gate"]["splitting_hz"]
    table = summary_table(values)
    (out / "summary.txt").write_text(table + "\n")
    _write_json(out / "summary.json", {"values": values, "single_qubit_fbar_per_ion": fbars,
                                       "config": cfg.to_dict()})
    print(table)
    return status


COMMANDS = {
    "simulate": cmd_simulate,
    "reconstruct": cmd_reconstruct,
    "bootstrap": cmd_bootstrap,
    "modes": cmd_modes,
    "pipeline": cmd_pipeline,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="iontomo", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    keys = _leaf_keys(RunConfig().to_dict())
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON config file")
        cfg_group = p.add_argument_group("config overrides")
        for key in keys:
            cfg_group.add_argument(f"--{key}", dest="cfg:" + key, metavar="VALUE")
        if name == "simulate":
            p.add_argument("--dump-sequence", action="store_true", help="print the U pulse sequence as JSON")
        elif name == "reconstruct":
            p.add_argument("--u", help="U dataset CSV (default: <output_dir>/dataset_u.csv)")
            p.add_argument("--uu", help="U^2 dataset CSV (default: <output_dir>/dataset_uu.csv)")
        elif name == "bootstrap":
            p.add_argument("--process", help="process matrix JSON (default: <output_dir>/process_u.json)")
        elif name == "modes":
            p.add_argument("--format", choices=("json", "csv"), default="json")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", ConvergenceWarning)
            return COMMANDS[args.command](cfg, args)
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ChainError, np.linalg.LinAlgError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGED


if __name__ == "__main__":
    sys.exit(main())

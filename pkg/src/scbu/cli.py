"""Command-line entry point: ``scbu <subcommand> ...``.

Settings come from an optional JSON run config (``--config``); command-line
flags override it. Every output file lands under ``--out``. Exit codes:
0 success, 1 usage, 2 data error, 3 backend error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

from .behavior_log import load_log
from .emotion_dynamics import (
    EmotionConfig,
    FixtureDescriber,
    HttpDescriber,
    StubDescriber,
)
from .ensemble import AgentsConfig, DiscussionTranscript
from .errors import BackendError, DataError, ScbuError
from .eval_harness.dataset import Case, load_dataset, save_dataset
from .eval_harness.protocols import (
    EnsembleConfig,
    PipelineConfig,
    build_case_script,
    fewshot_run,
    loocv_run,
    predict,
    sweep_table,
    threshold_sweep,
    write_sweep_csv,
)
from .eval_harness.synth import SynthSpec, synth_dataset
from .llm_gateway import BackendSpec, make_backend
from .prompt_builder import PromptProfile, PromptTemplates, build_prompt
from .response_parser import ParserConfig, dumps_events, parse_events
from .script_compiler import CompilerConfig, ScriptDocument

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_BACKEND = 0, 1, 2, 3

logger = logging.getLogger("scbu")


class UsageError(Exception):
    pass


# --------------------------------------------------------------------------
# run config
# --------------------------------------------------------------------------

_SECTIONS = {
    "paths", "parser", "compiler", "emotion", "profile", "describer",
    "backends", "decision_maker", "ensemble", "protocol", "workers",
}
_PATH_KEYS = {"dataset", "templates", "fixtures", "output_dir"}
_ENSEMBLE_KEYS = {"mode", "members", "tie_break", "agents"}
_PROTOCOL_KEYS = {"name", "shots", "seed", "alphas"}
_DESCRIBER_KEYS = {"kind", "path", "endpoint"}


def _check_keys(d: dict, allowed: set, where: str):
    if not isinstance(d, dict):
        raise UsageError(f"config section {where!r} must be an object")
    unknown = set(d) - allowed
    if unknown:
        raise UsageError(f"unknown keys in {where}: {sorted(unknown)}")


@dataclass
class RunConfig:
    paths: dict = field(default_factory=dict)
    parser: ParserConfig = field(default_factory=ParserConfig)
    compiler: CompilerConfig = field(default_factory=CompilerConfig)
    emotion: EmotionConfig = field(default_factory=EmotionConfig)
    profile: PromptProfile = field(default_factory=PromptProfile)
    describer: dict = field(default_factory=dict)
    backends: dict = field(default_factory=dict)
    decision_maker: Optional[str] = None
    ensemble: dict = field(default_factory=dict)
    protocol: dict = field(default_factory=dict)
    workers: int = 4

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        _check_keys(d, _SECTIONS, "config")
        cfg = cls()
        try:
            if "paths" in d:
                _check_keys(d["paths"], _PATH_KEYS, "paths")
                for key, value in d["paths"].items():
                    if key != "output_dir" and not Path(value).exists():
                        raise DataError(f"config path {key}={value!r} does not exist")
                cfg.paths = dict(d["paths"])
            if "parser" in d:
                cfg.parser = ParserConfig.from_dict(d["parser"])
            if "compiler" in d:
                cfg.compiler = CompilerConfig.from_dict(d["compiler"])
            if "emotion" in d:
                cfg.emotion = EmotionConfig.from_dict(d["emotion"])
            if "profile" in d:
                cfg.profile = PromptProfile.from_dict(d["profile"])
            if "describer" in d:
                _check_keys(d["describer"], _DESCRIBER_KEYS, "describer")
                cfg.describer = dict(d["describer"])
            for spec in d.get("backends", []):
                if "api_key" in spec:
                    raise UsageError("API keys are read from environment variables only; use api_key_env")
                b = BackendSpec.from_dict(spec)
                cfg.backends[b.name] = b
            cfg.decision_maker = d.get("decision_maker")
            if "ensemble" in d:
                _check_keys(d["ensemble"], _ENSEMBLE_KEYS, "ensemble")
                cfg.ensemble = dict(d["ensemble"])
            if "protocol" in d:
                _check_keys(d["protocol"], _PROTOCOL_KEYS, "protocol")
                cfg.protocol = dict(d["protocol"])
            cfg.workers = int(d.get("workers", 4))
        except (TypeError, ValueError) as exc:
            raise UsageError(f"invalid config: {exc}") from exc
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise UsageError(f"config file {path} not found") from None
        except json.JSONDecodeError as exc:
            raise UsageError(f"config file {path} is not valid JSON: {exc}") from None
        return cls.from_dict(doc)


def _backend(cfg: RunConfig, name: str, index: int = 0):
    """Resolve a backend by config name; bare ``mock`` and ``fixture:DIR`` work without config."""
    if name in cfg.backends:
        return make_backend(cfg.backends[name])
    if name == "mock":
        return make_backend(BackendSpec(name=f"mock{index}", kind="mock", allows_exemplars=True))
    if name.startswith("fixture:"):
        directory = name.split(":", 1)[1]
        return make_backend(BackendSpec(name=f"fixture{index}", kind="fixture", options={"directory": directory}))
    raise UsageError(f"unknown backend {name!r}; define it under 'backends' in the config")


def _ensemble(cfg: RunConfig, args) -> EnsembleConfig:
    mode = args.ensemble or cfg.ensemble.get("mode", "none")
    names = args.backend or cfg.ensemble.get("members") or list(cfg.backends) or ["mock"]
    backends = tuple(_backend(cfg, n, k) for k, n in enumerate(names))
    decider = None
    if mode == "agents":
        dm = args.decision_maker or cfg.decision_maker or "mock"
        decider = _backend(cfg, dm, len(names))
    agents = AgentsConfig.from_dict(cfg.ensemble.get("agents", {}))
    if args.max_rounds is not None:
        agents = replace(agents, max_rounds=args.max_rounds)
    try:
        return EnsembleConfig(mode, backends, decider, agents, cfg.ensemble.get("tie_break", "ASD"))
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _describer(cfg: RunConfig, args):
    spec = dict(cfg.describer)
    if getattr(args, "describer", None):
        kind, _, arg = args.describer.partition(":")
        spec = {"kind": kind}
        if arg:
            spec["endpoint" if kind == "http" else "path"] = arg
    kind = spec.get("kind", "stub")
    if kind == "stub":
        return StubDescriber()
    if kind == "fixture":
        return FixtureDescriber(spec["path"])
    if kind == "http":
        return HttpDescriber(spec["endpoint"])
    raise UsageError(f"unknown describer kind {kind!r}")


def _pipeline(cfg: RunConfig, args) -> PipelineConfig:
    emotion = cfg.emotion
    if getattr(args, "alpha", None) is not None:
        emotion = replace(emotion, alpha=args.alpha)
    use_emotion = bool(getattr(args, "emotion", False))
    return PipelineConfig(
        parser=cfg.parser,
        compiler=cfg.compiler,
        emotion=emotion,
        profile=cfg.profile,
        use_emotion=use_emotion,
        describer=_describer(cfg, args) if use_emotion else None,
    )


def _out_dir(cfg: RunConfig, args) -> Path:
    out = Path(args.out or cfg.paths.get("output_dir") or "scbu-out")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _emit(args, payload: dict, text: str) -> None:
    if args.json:
        sys.stdout.write(json.dumps(payload, sort_keys=True, indent=2, ensure_ascii=False) + "\n")
    else:
        sys.stdout.write(text if text.endswith("\n") else text + "\n")


def _load_case(args) -> Case:
    log, manifest = load_log(args.log, args.manifest)
    return Case(log.case_id, log, manifest, "TD")


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------

def cmd_parse(args, cfg: RunConfig) -> int:
    log, manifest = load_log(args.log, args.manifest)
    events = parse_events(log, manifest, cfg.parser)
    path = _out_dir(cfg, args) / f"{log.case_id}.events.jsonl"
    path.write_text(dumps_events(events), encoding="utf-8")
    _emit(args, {"case_id": log.case_id, "events": len(events), "path": str(path)},
          f"{len(events)} events -> {path}")
    return EXIT_OK


def cmd_script(args, cfg: RunConfig) -> int:
    case = _load_case(args)
    script = build_case_script(case, _pipeline(cfg, args)).script
    out = _out_dir(cfg, args)
    txt = out / f"{case.case_id}.script.txt"
    txt.write_text(script.render(), encoding="utf-8")
    (out / f"{case.case_id}.script.json").write_text(
        json.dumps(script.to_dict(), sort_keys=True, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")
    _emit(args, {"case_id": case.case_id, "lines": len(script.lines), "path": str(txt)}, script.render())
    return EXIT_OK


def _scripts_from_args(args, cfg: RunConfig) -> list[tuple[str, ScriptDocument, Optional[str]]]:
    pipeline = _pipeline(cfg, args)
    if args.script:
        doc = ScriptDocument.from_dict(json.loads(Path(args.script).read_text(encoding="utf-8")))
        return [(doc.case_id, doc, None)]
    if args.log:
        case = _load_case(args)
        return [(case.case_id, build_case_script(case, pipeline).script, None)]
    dataset = args.dataset or cfg.paths.get("dataset")
    if not dataset:
        raise UsageError("give one of --script, --log or --dataset")
    return [(c.case_id, build_case_script(c, pipeline).script, c.label) for c in load_dataset(dataset)]


def cmd_prompt(args, cfg: RunConfig) -> int:
    templates = PromptTemplates.load(cfg.paths.get("templates"))
    out = _out_dir(cfg, args)
    rendered = []
    for case_id, script, _ in _scripts_from_args(args, cfg):
        bundle = build_prompt(script, cfg.profile, templates=templates)
        path = out / f"{case_id}.prompt.txt"
        path.write_text(bundle.render(), encoding="utf-8")
        rendered.append({"case_id": case_id, "prompt_hash": bundle.prompt_hash(), "path": str(path)})
    _emit(args, {"prompts": rendered}, "\n".join(f"{r['case_id']} -> {r['path']}" for r in rendered))
    return EXIT_OK


def cmd_detect(args, cfg: RunConfig) -> int:
    ens = _ensemble(cfg, args)
    templates = PromptTemplates.load(cfg.paths.get("templates"))
    out = _out_dir(cfg, args)
    audit = out / "audit"
    results = []
    for case_id, script, truth in _scripts_from_args(args, cfg):
        bundle = build_prompt(script, cfg.profile, templates=templates)
        pred = predict(bundle, case_id, ens, audit)
        results.append({"case_id": case_id, "label": pred.label, "truth": truth,
                        "rationale": pred.rationale, **pred.detail})
    (out / "detections.json").write_text(
        json.dumps({"ensemble": ens.mode, "results": results}, sort_keys=True, indent=2, ensure_ascii=False) + "\n",
        encoding="utf-8")
    _emit(args, {"ensemble": ens.mode, "results": results},
          "\n".join(f"{r['case_id']}: {r['label']}" for r in results))
    return EXIT_OK


def cmd_eval(args, cfg: RunConfig) -> int:
    dataset = args.dataset or cfg.paths.get("dataset")
    if not dataset:
        raise UsageError("eval needs a dataset directory")
    cases = load_dataset(dataset)
    ens = _ensemble(cfg, args)
    pipeline = _pipeline(cfg, args)
    out = _out_dir(cfg, args)
    protocol = args.protocol or cfg.protocol.get("name", "loocv")
    workers = args.workers or cfg.workers
    if protocol == "sweep":
        alphas = args.alphas or cfg.protocol.get("alphas") or [0.05, 0.1, 0.175, 0.2, 0.3]
        rows = threshold_sweep(cases, alphas, pipeline, ens, workers)
        write_sweep_csv(rows, out / "sweep.csv")
        table = sweep_table(rows)
        (out / "sweep.json").write_text(json.dumps(table, indent=2) + "\n", encoding="utf-8")
        lines = ["alpha   points  ACC     F1      SN      SP"]
        for r in table:
            vals = ["n/a" if r[k] is None else f"{r[k]:.2f}" for k in ("acc", "f1", "sn", "sp")]
            lines.append((f"{r['alpha']:<7} {r['n_points']:<7} " + " ".join(f"{v:<7}" for v in vals)).rstrip())
        _emit(args, {"sweep": table}, "\n".join(lines))
        return EXIT_OK
    if protocol == "loocv":
        report = loocv_run(cases, pipeline, ens, workers, out / "audit")
    elif protocol == "fewshot":
        shots = args.shots or cfg.protocol.get("shots", 20)
        seed = args.seed if args.seed is not None else cfg.protocol.get("seed", 0)
        report = fewshot_run(cases, pipeline, ens, shots, seed, max_workers=workers, audit_dir=out / "audit")
    else:
        raise UsageError(f"unknown protocol {protocol!r}")
    (out / "report.json").write_text(report.to_json(), encoding="utf-8")
    (out / "report.txt").write_text(report.to_text(), encoding="utf-8")
    _emit(args, report.to_dict(), report.to_text())
    if report.failed and not report.rows and all("Backend" in e or "Exemplar" in e for _, e in report.failed):
        return EXIT_BACKEND
    return EXIT_OK


def cmd_synth(args, cfg: RunConfig) -> int:
    spec = SynthSpec(n_asd=args.n_asd, n_td=args.n_td, seed=args.seed if args.seed is not None else 0, fps=args.fps)
    cases = synth_dataset(spec)
    out = _out_dir(cfg, args)
    index = save_dataset(cases, out)
    _emit(args, {"cases": len(cases), "index": str(index)}, f"{len(cases)} cases -> {out}")
    return EXIT_OK


def cmd_show_transcript(args, cfg: RunConfig) -> int:
    try:
        doc = json.loads(Path(args.transcript).read_text(encoding="utf-8"))
        transcript = DiscussionTranscript.from_dict(doc)
    except FileNotFoundError:
        raise DataError(f"{args.transcript} not found") from None
    except (ValueError, KeyError, TypeError) as exc:
        raise DataError(f"{args.transcript}: not a discussion transcript ({exc})") from None
    _emit(args, transcript.to_dict(), transcript.pretty())
    return EXIT_OK


# --------------------------------------------------------------------------
# argument parsing
# --------------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(EXIT_USAGE)


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON run config; flags override it")
    p.add_argument("--out", help="output directory (all files are written below it)")
    p.add_argument("--json", action="store_true", help="machine-readable output on stdout")
    p.add_argument("-v", "--verbose", action="store_true")


def _log_args(p: argparse.ArgumentParser, required: bool) -> None:
    p.add_argument("--log", required=required, help="behavior log (.log.jsonl)")
    p.add_argument("--manifest", help="session manifest (default: alongside the log)")


def _emotion_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--emotion", action="store_true", help="add emotion lines to the script")
    p.add_argument("--describer", help="stub | fixture:PATH | http:URL (default stub)")
    p.add_argument("--alpha", type=float, help="emotion threshold")


def _ensemble_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--backend", action="append", help="backend name from the config, 'mock' or 'fixture:DIR' (repeatable)")
    p.add_argument("--ensemble", choices=["none", "vote", "agents"])
    p.add_argument("--decision-maker", dest="decision_maker")
    p.add_argument("--max-rounds", dest="max_rounds", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="scbu", description="Behavior scripts and LLM-based screening, from logs to evaluation reports.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("parse", help="detect response events in a behavior log")
    _common(p)
    _log_args(p, True)
    p.set_defaults(func=cmd_parse)

    p = sub.add_parser("script", help="compile a behavior script")
    _common(p)
    _log_args(p, True)
    _emotion_args(p)
    p.set_defaults(func=cmd_script)

    for name, func, help_ in (("prompt", cmd_prompt, "render detection prompts"),
                              ("detect", cmd_detect, "screen scripts with one or more backends")):
        p = sub.add_parser(name, help=help_)
        _common(p)
        _log_args(p, False)
        p.add_argument("--script", help="compiled script (.script.json)")
        p.add_argument("--dataset", help="dataset directory")
        _emotion_args(p)
        if name == "detect":
            _ensemble_args(p)
        p.set_defaults(func=func)

    p = sub.add_parser("eval", help="run an evaluation protocol over a dataset")
    _common(p)
    p.add_argument("--dataset")
    p.add_argument("--protocol", choices=["loocv", "fewshot", "sweep"])
    p.add_argument("--shots", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--alphas", type=float, nargs="+")
    p.add_argument("--workers", type=int)
    _emotion_args(p)
    _ensemble_args(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("synth", help="generate a synthetic labelled dataset")
    _common(p)
    p.add_argument("--n-asd", dest="n_asd", type=int, default=10)
    p.add_argument("--n-td", dest="n_td", type=int, default=10)
    p.add_argument("--seed", type=int)
    p.add_argument("--fps", type=float, default=10.0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("show-transcript", help="pretty-print a discussion transcript")
    _common(p)
    p.add_argument("transcript")
    p.set_defaults(func=cmd_show_transcript)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = RunConfig.load(args.config) if args.config else RunConfig()
        return args.func(args, cfg)
    except UsageError as exc:
        sys.stderr.write(f"scbu: usage error: {exc}\n")
        return EXIT_USAGE
    except BackendError as exc:
        sys.stderr.write(f"scbu: backend error: {exc}\n")
        return EXIT_BACKEND
    except DataError as exc:
        sys.stderr.write(f"scbu: data error: {type(exc).__name__}: {exc}\n")
        return EXIT_DATA
    except ScbuError as exc:
        sys.stderr.write(f"scbu: error: {type(exc).__name__}: {exc}\n")
        return EXIT_DATA
    except FileNotFoundError as exc:
        sys.stderr.write(f"scbu: data error: {exc}\n")
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())

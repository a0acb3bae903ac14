import argparse
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional

from pydantic import ValidationError

from app import services
from app.config import load_experiment_config, settings
from app.schemas import ExperimentConfig, ExperimentKind
from src.errors import BeamBnfError, exit_code_for
from src.experiments import json_text, write_text_atomic

VERBS = {
    "audit-divisors": ExperimentKind.divisor_audit,
    "scan-mass": ExperimentKind.mass_scan,
    "bnf": ExperimentKind.bnf,
    "lifespan": ExperimentKind.lifespan,
    "fit": ExperimentKind.fit,
    "predict-times": ExperimentKind.predict_times,
    "dump-hamiltonian": None,
}

logger = logging.getLogger("beam_bnf")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="beam-bnf",
        description="Нормальная форма Биркгофа и времена устойчивости для нелинейного уравнения балки",
    )
    parser.add_argument("verb", choices=sorted(VERBS), help="какой эксперимент запустить")
    parser.add_argument("--config", type=Path, help="INI-файл эксперимента")
    parser.add_argument("--seed", type=int, help="переопределить seed из конфига")
    parser.add_argument("--out", help="каталог для record.json и CSV")
    parser.add_argument("--hamiltonian", help="файл R0 в текстовом формате dump-hamiltonian (для bnf)")
    parser.add_argument(
        "--override-gates",
        action="store_true",
        help="продолжать шаги нормальной формы при нарушенном условии малости",
    )
    return parser


def _load_config(args: argparse.Namespace) -> ExperimentConfig:
    overrides: Dict[str, Any] = {
        "seed": args.seed,
        "out": args.out,
        "hamiltonian": args.hamiltonian,
        "override_gates": True if args.override_gates else None,
    }
    kind = VERBS[args.verb]
    if kind is not None:
        overrides["kind"] = kind.value
    if args.config is not None:
        return load_experiment_config(args.config, overrides)
    values = {key: value for key, value in overrides.items() if value is not None}
    values.setdefault("kind", ExperimentKind.bnf.value)
    return ExperimentConfig(**values)


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=getattr(logging, settings.log_level, logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )

    try:
        config = _load_config(args)
    except (ValidationError, BeamBnfError, ValueError, OSError) as exc:
        logger.error("[WARN] invalid configuration: %s", exc)
        code = exit_code_for(exc)
        return 2 if isinstance(exc, OSError) else code

    if args.verb == "dump-hamiltonian":
        try:
            text = services.hamiltonian_text(config)
        except BeamBnfError as exc:
            logger.error("[WARN] %s", exc)
            return exc.exit_code
        if config.out:
            write_text_atomic(text, Path(config.out) / "R0.txt")
        else:
            sys.stdout.write(text)
        return 0

    record = services.run_experiment(config)
    sys.stdout.write(json_text(record.model_dump(mode="json", by_alias=True)))
    return record.exit_code


if __name__ == "__main__":
    sys.exit(main())

#!/usr/bin/env python3
"""
Write a commented TOML experiment file holding every default of PipelineConfig.

Usage: python scripts/write_default_config.py [experiment.toml] [--paper-scale]
"""

import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from pydantic import BaseModel  # noqa: E402

from app.models.config import PipelineConfig  # noqa: E402


def toml_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, float)):
        return repr(value)
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(toml_value(v) for v in value) + "]"
    if hasattr(value, "value"):
        value = value.value
    return '"' + str(value).replace("\\", "\\\\").replace('"', '\\"') + '"'


def render(config: PipelineConfig) -> str:
    lines = ["# occreid experiment configuration", ""]
    for section_name in PipelineConfig.model_fields:
        section: BaseModel = getattr(config, section_name)
        lines.append(f"[{section_name}]")
        for name, field in type(section).model_fields.items():
            value = getattr(section, name)
            if value is None:
                lines.append(f"# {name} =")
                continue
            if field.description:
                lines.append(f"# {field.description}")
            lines.append(f"{name} = {toml_value(value)}")
        lines.append("")
    return "\n".join(lines)


def main(argv) -> int:
    paper = "--paper-scale" in argv
    args = [a for a in argv if a != "--paper-scale"]
    target = Path(args[0]) if args else Path("experiment.toml")
    config = PipelineConfig()
    if paper:
        config = config.paper_scale()
    target.write_text(render(config), encoding="utf-8")
    print(f"Wrote {target}")
    return 0


if __name__ == "__main__":
    sys.exit(main(sys.argv[1:]))

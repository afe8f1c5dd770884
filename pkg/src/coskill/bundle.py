"""Single-file model bundle: predicate libraries, operators and skills."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .config import Config
from .errors import IoError, SchemaError, UnknownSkill
from .operators import Operator
from .predicates import Libraries
from .skills import Skill
from .world import dumps

BUNDLE_FORMAT = "coskill-bundle"
BUNDLE_VERSION = 1


@dataclass
class ModelBundle:
    types: list
    libraries: Libraries
    operators: list
    skills: dict  # skill id -> Skill
    config: Config = field(default_factory=Config)
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        for op in self.operators:
            if op.skill_ref not in self.skills:
                raise SchemaError(f"operator {op.name}: skill {op.skill_ref!r} missing from bundle")

    def skill(self, skill_id: str) -> Skill:
        try:
            return self.skills[skill_id]
        except KeyError:
            raise UnknownSkill(f"no skill {skill_id!r}; known: {sorted(self.skills)}") from None

    def operator(self, name: str) -> Operator:
        for op in self.operators:
            if op.name == name:
                return op
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {
            "format": BUNDLE_FORMAT,
            "version": BUNDLE_VERSION,
            "provenance": self.provenance,
            "types": list(self.types),
            "config": self.config.to_dict(),
            "libraries": self.libraries.to_dict(),
            "operators": [op.to_dict() for op in self.operators],
            "skills": [self.skills[k].to_dict() for k in sorted(self.skills)],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelBundle":
        if d.get("format") != BUNDLE_FORMAT:
            raise SchemaError("not a model bundle")
        if d.get("version") != BUNDLE_VERSION:
            raise SchemaError(f"unsupported bundle version {d.get('version')}")
        skills = {s["id"]: Skill.from_dict(s) for s in d["skills"]}
        return cls(
            list(d["types"]),
            Libraries.from_dict(d["libraries"]),
            [Operator.from_dict(o) for o in d["operators"]],
            skills,
            Config.from_dict(d["config"]),
            dict(d.get("provenance", {})),
        )

    def dumps(self) -> str:
        return dumps(self.to_dict()) + "\n"

    def save(self, path) -> None:
        path = Path(path)
        tmp = path.with_name(path.name + ".tmp")
        try:
            tmp.write_text(self.dumps())
            tmp.replace(path)
        except OSError as e:
            raise IoError(f"cannot write bundle {path}: {e}") from e

    @classmethod
    def load(cls, path) -> "ModelBundle":
        try:
            text = Path(path).read_text()
        except OSError as e:
            raise IoError(f"cannot read bundle {path}: {e}") from e
        try:
            return cls.from_dict(json.loads(text))
        except (KeyError, TypeError, ValueError) as e:
            if isinstance(e, SchemaError):
                raise
            raise SchemaError(f"malformed bundle: {e}") from e

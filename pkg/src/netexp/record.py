from __future__ import annotations

import dataclasses
import json
import typing as t
from pathlib import Path

from typing_extensions import Self, dataclass_transform

from .errors import ConfigError


def nested(cls: type[Record], *, default: t.Any = dataclasses.MISSING) -> t.Any:
    """Declare a field holding a record (or a list of records) of type `cls`."""
    return dataclasses.field(default=default, metadata={"record": cls})


@dataclass_transform(frozen_default=True, field_specifiers=(nested, dataclasses.field))
class _RecordMeta(type):
    def __new__(
        cls, name: str, bases: tuple[type, ...], namespace: dict[str, t.Any]
    ) -> type:
        new_cls = super().__new__(cls, name, bases, namespace)
        return dataclasses.dataclass(frozen=True)(new_cls)  # type: ignore /pyright is bad with metaclasses/


class Record(metaclass=_RecordMeta):
    """Immutable configuration or result record convertible to and from JSON objects."""

    def to_dict(self) -> dict[str, t.Any]:
        return dataclasses.asdict(self)

    def replace(self, **changes: t.Any) -> Self:
        return dataclasses.replace(self, **changes)

    @classmethod
    def from_dict(cls, data: t.Mapping[str, t.Any]) -> Self:
        if not isinstance(data, t.Mapping):
            raise ConfigError(
                f"{cls.__name__}: expected an object, found {type(data).__name__}"
            )
        fields = {field.name: field for field in dataclasses.fields(cls)}
        unknown = sorted(set(data) - set(fields))
        if unknown:
            raise ConfigError(f"{cls.__name__}: unknown field(s) {', '.join(unknown)}")

        kwargs: dict[str, t.Any] = {}
        for name, value in data.items():
            subcls = fields[name].metadata.get("record")
            if subcls is None or value is None or isinstance(value, Record):
                kwargs[name] = value
            elif isinstance(value, t.Mapping):
                kwargs[name] = subcls.from_dict(value)
            elif isinstance(value, (list, tuple)):
                kwargs[name] = tuple(subcls.from_dict(v) for v in value)
            else:
                raise ConfigError(
                    f"Mismatched type for field {name}: expected an object, found {type(value).__name__}"
                )

        try:
            return cls(**kwargs)
        except (TypeError, ValueError) as e:
            raise ConfigError(f"{cls.__name__}: {e}") from e

    @classmethod
    def load(cls, path: str | Path) -> Self:
        try:
            data = json.loads(Path(path).read_text())
        except OSError as e:
            raise ConfigError(f"Cannot read config file {path}: {e.strerror}") from e
        except json.JSONDecodeError as e:
            raise ConfigError(f"Config file {path} is not valid JSON: {e}") from e
        return cls.from_dict(data)

    def with_overrides(self, assignments: t.Iterable[str]) -> Self:
        """Apply `key=value` overrides; dotted keys reach into nested objects.

        Values are parsed as JSON when possible and kept as plain strings otherwise.
        """
        data = self.to_dict()
        for item in assignments:
            key, sep, raw = item.partition("=")
            if not sep or not key:
                raise ConfigError(f"Override {item!r} is not of the form key=value")
            try:
                value = json.loads(raw)
            except json.JSONDecodeError:
                value = raw

            *path, last = key.split(".")
            target = data
            for part in path:
                node = target.get(part)
                if not isinstance(node, dict):
                    node = {}
                    target[part] = node
                target = node
            target[last] = value
        return type(self).from_dict(data)

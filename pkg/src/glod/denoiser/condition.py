from __future__ import annotations

import re
from dataclasses import dataclass

from glod.errors import FormatError, InvalidArgumentError

# no brackets or commas, no surrounding whitespace: keeps str() parseable
_NAME = re.compile(r"^[^\[\],\s](?:[^\[\],]*[^\[\],\s])?$")


@dataclass(frozen=True, order=True)
class Condition:
    """What a denoiser is conditioned on.

    The null (unconditional) condition has ``category == ""`` and no
    attributes; build it through :data:`NULL`. Tokens compare by value.
    """

    category: str = ""
    attributes: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "attributes", tuple(self.attributes))
        if not self.category and self.attributes:
            raise InvalidArgumentError("the null condition carries no attributes")

    @classmethod
    def token(cls, category: str, *attributes: str) -> Condition:
        if category == "null":
            raise InvalidArgumentError("'null' is reserved for the unconditional condition")
        for name in (category, *attributes):
            if not isinstance(name, str) or not _NAME.match(name):
                raise InvalidArgumentError(f"invalid token name {name!r}")
        return cls(category, tuple(attributes))

    @property
    def is_null(self) -> bool:
        return not self.category

    @property
    def ids(self) -> tuple[str, ...]:
        return () if self.is_null else (self.category, *self.attributes)

    def to_json(self) -> dict:
        if self.is_null:
            return {"kind": "null"}
        return {"kind": "token", "category": self.category, "attributes": list(self.attributes)}

    @classmethod
    def from_json(cls, obj) -> Condition:
        if isinstance(obj, str):
            return cls.parse(obj)
        try:
            if obj["kind"] == "null":
                return NULL
            if obj["kind"] == "token":
                return cls.token(obj["category"], *obj.get("attributes", []))
        except (KeyError, TypeError, ValueError) as e:  # InvalidArgumentError is a ValueError
            raise FormatError(f"bad condition {obj!r}: {e}") from None
        raise FormatError(f"bad condition kind in {obj!r}")

    def __str__(self) -> str:
        if self.is_null:
            return "null"
        if not self.attributes:
            return self.category
        return f"{self.category}[{','.join(self.attributes)}]"

    _PATTERN = re.compile(r"^([^\[\],]+)(?:\[([^\[\]]*)\])?$")

    @classmethod
    def parse(cls, text: str) -> Condition:
        """Inverse of ``str()``: ``"null"``, ``"cat"`` or ``"cat[a,b]"``."""
        text = text.strip()
        if text == "null":
            return NULL
        m = cls._PATTERN.match(text)
        if not m:
            raise FormatError(f"cannot parse condition {text!r}")
        attrs = tuple(a for a in (m.group(2) or "").split(",") if a)
        try:
            return cls.token(m.group(1), *attrs)
        except InvalidArgumentError as e:
            raise FormatError(str(e)) from None


NULL = Condition()

"""Name maps: how source checkpoint keys become canonical tensor names.

A map is a YAML document:

    layers: 12                  # expands "{i}" in rules
    strip_prefixes: [module., backbone.]
    state_dict_key: teacher     # optional sub-dict to descend into
    rules:
      - src: patch_embed.proj.weight
        dst: patch_embed.w
      - src: blocks.{i}.attn.qkv.weight
        dst: blocks.{i}.attn.wqkv
        transform: transpose
      - src: [q.weight, k.weight, v.weight]   # concatenated, then transformed
        dst: attn.wqkv
        concat_axis: 0
        transform: transpose

Transforms: none | transpose (2-d) | drop_leading (remove exactly one
leading size-1 axis, e.g. torch's [1, 1+N, e] pos_embed -> [1+N, e]).
Every canonical name must be produced exactly once.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import yaml

from .errors import BadMap

_TRANSFORMS = ("none", "transpose", "drop_leading")


@dataclass
class MapRule:
    src: list[str]  # one key, or several to concatenate
    dst: str
    transform: str = "none"
    concat_axis: int = 0

    def __post_init__(self):
        if self.transform not in _TRANSFORMS:
            raise BadMap(f"unknown transform {self.transform!r} for {self.dst!r}")


@dataclass
class NameMap:
    rules: list[MapRule]
    strip_prefixes: list[str] = field(default_factory=list)
    state_dict_key: str | None = None

    def apply_transform(self, rule: MapRule, value: np.ndarray) -> np.ndarray:
        if rule.transform == "transpose":
            if value.ndim != 2:
                raise BadMap(f"transpose needs a 2-d tensor for {rule.dst!r}, "
                             f"got shape {value.shape}")
            return np.ascontiguousarray(value.T)
        if rule.transform == "drop_leading":
            if value.ndim < 2 or value.shape[0] != 1:
                raise BadMap(f"drop_leading needs a leading size-1 axis for "
                             f"{rule.dst!r}, got shape {value.shape}")
            return value[0]
        return value


def _expand(template: str, i: int) -> str:
    return template.replace("{i}", str(i))


def load_name_map(path, layers: int | None = None) -> NameMap:
    try:
        with open(path, "r", encoding="utf-8") as f:
            doc = yaml.safe_load(f)
    except yaml.YAMLError as exc:
        raise BadMap(f"cannot parse map: {exc}") from None
    if not isinstance(doc, dict) or "rules" not in doc:
        raise BadMap("map must be a mapping with a 'rules' list")
    n_layers = layers if layers is not None else int(doc.get("layers", 0))

    rules: list[MapRule] = []
    for raw in doc["rules"]:
        if not isinstance(raw, dict) or "src" not in raw or "dst" not in raw:
            raise BadMap(f"rule needs 'src' and 'dst': {raw!r}")
        src = raw["src"] if isinstance(raw["src"], list) else [raw["src"]]
        base = MapRule(src=[str(s) for s in src], dst=str(raw["dst"]),
                       transform=str(raw.get("transform", "none")),
                       concat_axis=int(raw.get("concat_axis", 0)))
        if any("{i}" in s for s in base.src) or "{i}" in base.dst:
            if n_layers <= 0:
                raise BadMap(f"rule {base.dst!r} uses {{i}} but 'layers' is not set")
            for i in range(n_layers):
                rules.append(MapRule([_expand(s, i) for s in base.src],
                                     _expand(base.dst, i), base.transform,
                                     base.concat_axis))
        else:
            rules.append(base)

    seen = set()
    for rule in rules:
        if rule.dst in seen:
            raise BadMap(f"canonical name {rule.dst!r} produced more than once")
        seen.add(rule.dst)
    return NameMap(rules=rules,
                   strip_prefixes=[str(p) for p in doc.get("strip_prefixes", [])],
                   state_dict_key=doc.get("state_dict_key"))

import math
from typing import Any, Dict

from yaml import YAMLObject


class YAMLObjectWithDefaults(YAMLObject):
    @classmethod
    def load(cls, loader, node):
        fields = loader.construct_mapping(node, deep=True)
        return cls.from_dict(fields)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]):
        # noinspection PyArgumentList
        return cls(**data)


def load_log(loader, node) -> float:
    """`!log 3` reads as log 3."""
    return math.log(float(loader.construct_scalar(node)))

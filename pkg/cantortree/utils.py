import hashlib
import json
import math
from typing import Any, Dict, Iterable, Optional

import numpy as np
from fuzzywuzzy.process import extractOne

SIGNIFICANT_DIGITS = 17


def hash_config(config: Dict[str, Any]) -> str:
    canonical = json.dumps(config, sort_keys=True, default=str)
    return hashlib.sha256(canonical.encode('utf-8')).hexdigest()[:16]


def format_float(value: float) -> str:
    value = float(value)
    if math.isnan(value):
        return 'nan'
    if math.isinf(value):
        return 'inf' if value > 0 else '-inf'
    return f'{value:.{SIGNIFICANT_DIGITS}g}'


def plain(value: Any) -> Any:
    """Turn numpy scalars and containers into JSON-ready values."""
    if isinstance(value, dict):
        return {str(k): plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return [plain(v) for v in value.tolist()]
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if math.isfinite(value):
            return float(format_float(value))
        return format_float(value)
    return value


def relative_difference(a: float, b: float) -> float:
    scale = max(abs(a), abs(b))
    if scale == 0:
        return 0.0
    return abs(a - b) / scale


def fuzzy_search(query: str, options: Iterable[str]) -> Optional[str]:
    result = extractOne(query, sorted(options), score_cutoff=50)
    if result is not None:
        return result[0]
    return None

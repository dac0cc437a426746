import math
from typing import Any, Dict, Iterable, List, Optional, Union

from rapidfuzz import fuzz, process

from config import get_logger

log = get_logger(__name__)

TRUE_WORDS = ("1", "true", "yes", "on")
FALSE_WORDS = ("0", "false", "no", "off")


def format_float(value: Optional[float]) -> str:
    """17 significant digits (lossless for doubles); None renders empty."""
    if value is None:
        return ""
    return f"{float(value):.17g}"


def parse_bool(text: Union[str, bool]) -> bool:
    if isinstance(text, bool):
        return text
    lowered = str(text).strip().lower()
    if lowered in TRUE_WORDS:
        return True
    if lowered in FALSE_WORDS:
        return False
    raise ValueError(f"Expected a boolean (true/false), got {text!r}.")


def expand_range(text: Union[str, float, Iterable[float]]) -> List[float]:
    """
    Expands a range specification into its values.

    Accepts "start:stop:step" (stop included when hit within rounding), a
    comma-separated list "0.6,0.8,0.95", a single number, or an iterable.
    Raises ValueError for empty ranges or a nonpositive step.
    """
    if isinstance(text, (int, float)):
        return [float(text)]
    if not isinstance(text, str):
        values = [float(v) for v in text]
    elif ":" in text:
        parts = [p.strip() for p in text.split(":")]
        if len(parts) != 3:
            raise ValueError(f"Range {text!r} must look like start:stop:step.")
        start, stop, step = (float(p) for p in parts)
        if step <= 0:
            raise ValueError(f"Range step must be positive, got {step}.")
        count = math.floor((stop - start) / step + 1e-9) + 1
        values = [round(start + k * step, 12) for k in range(max(count, 0))]
    else:
        values = [float(p) for p in text.split(",") if p.strip()]
    if not values:
        raise ValueError(f"Range {text!r} is empty.")
    return values


def closest_key(name: str, choices: Iterable[str]) -> Optional[str]:
    """Best fuzzy match for a mistyped key, or None when nothing is close."""
    match = process.extractOne(name, list(choices), scorer=fuzz.WRatio, score_cutoff=60)
    return match[0] if match else None


def deep_merge(source: Dict[str, Any], destination: Dict[str, Any]) -> Dict[str, Any]:
    """Recursively merges two dictionaries.

    Updates `destination` with values from `source`. If a key exists in both and its
    value is a dictionary, the merge is applied recursively to that nested dictionary.
    Values that are None in `source` leave `destination` untouched, so unset
    command-line flags do not hide config-file values.

    Args:
        source (Dict[str, Any]): The dictionary with data to merge from.
        destination (Dict[str, Any]): The dictionary to merge into.

    Returns:
        Dict[str, Any]: The merged destination dictionary.
    """
    for key, value in source.items():
        if value is None:
            continue
        if isinstance(value, dict):
            node = destination.setdefault(key, {})
            deep_merge(value, node)
        else:
            destination[key] = value
    return destination

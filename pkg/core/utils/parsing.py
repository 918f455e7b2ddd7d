"""Small parsers for command-line specs such as `8x6x10` and `rows=64,rank=8`."""
from typing import Any, Dict, Iterable, List, Tuple, Union


def parse_dims(text: Union[str, int, Iterable[int]]) -> Tuple[int, ...]:
    """'8x6x10' (or a list from TOML) -> (8, 6, 10)."""
    if isinstance(text, int):
        return (text,)
    if not isinstance(text, str):
        return tuple(int(v) for v in text)
    try:
        dims = tuple(int(part) for part in text.lower().replace(",", "x").split("x") if part.strip())
    except ValueError as exc:
        raise ValueError(f"Cannot parse dimensions '{text}', expected e.g. 8x6x10") from exc
    if not dims:
        raise ValueError(f"Cannot parse dimensions '{text}', expected e.g. 8x6x10")
    return dims


def parse_list(text: Union[str, Iterable], cast=float) -> List[Any]:
    """'0.4,0.6,0.8' -> [0.4, 0.6, 0.8]; lists pass through with the cast applied."""
    if isinstance(text, str):
        parts = [part.strip() for part in text.split(",") if part.strip()]
    elif isinstance(text, (int, float)):
        parts = [text]
    else:
        parts = list(text)
    try:
        return [cast(part) for part in parts]
    except ValueError as exc:
        raise ValueError(f"Cannot parse list '{text}'") from exc


def _scalar(value: str) -> Any:
    for cast in (int, float):
        try:
            return cast(value)
        except ValueError:
            continue
    return value


def parse_key_values(text: str) -> Dict[str, Any]:
    """'rows=64,noise=0.01' -> {'rows': 64, 'noise': 0.01}."""
    values: Dict[str, Any] = {}
    for part in filter(None, (p.strip() for p in text.split(","))):
        key, sep, value = part.partition("=")
        if not sep or not key.strip():
            raise ValueError(f"Expected key=value, got '{part}'")
        values[key.strip()] = _scalar(value.strip())
    return values

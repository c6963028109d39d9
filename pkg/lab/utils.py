import ast
import copy
import json
import os
import time
from pathlib import Path
from typing import Optional, Union

import pandas as pd
from pydantic import BaseModel

from fujita_lab.certify import CertifyConfig
from fujita_lab.evolve import SolverConfig
from fujita_lab.shared import LabError, StoreError, hash_text

ENV_OUT = "FUJITA_LAB_OUT"


class UsageError(LabError):
    pass


class Timer(BaseModel):
    name: str = ""
    start: float = 0.0

    def __enter__(self):
        self.start = time.time()
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        duration = round(time.time() - self.start, 3)
        print(f"Timer {self.name}: {duration}s")


def update_nested_dict(d: dict, k: str, v, i=0, sep="__"):
    d = copy.deepcopy(d)
    keys = k.split(sep)
    if keys[i] not in d.keys():
        raise UsageError(f"Unknown config key: {dict(key=k, known=sorted(d.keys()))}")
    if i == len(keys) - 1:
        orig = d[keys[i]]
        if isinstance(orig, dict):
            raise UsageError(f"Config key names a section, not a value: {dict(key=k)}")
        if v != orig:
            print(dict(updated_key=k, new_value=v, orig=orig))
            d[keys[i]] = v
    else:
        if not isinstance(d[keys[i]], dict):
            raise UsageError(f"Config key goes below a value: {dict(key=k)}")
        d[keys[i]] = update_nested_dict(d=d[keys[i]], k=k, v=v, i=i + 1)
    return d


def parse_value(text: str):
    try:
        return ast.literal_eval(text)
    except (ValueError, SyntaxError):
        return text


def read_config(path: Union[str, Path]) -> dict:
    """Flat `key = value` file, `#` starts a comment."""
    out = {}
    with open(path) as f:
        for number, line in enumerate(f, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"Expected key = value: {dict(path=str(path), line=number)}")
            key, value = [x.strip() for x in line.split("=", 1)]
            out[key] = parse_value(value)
    return out


class StoreConfig(BaseModel):
    root: Path = Path("outputs")


class LabConfig(BaseModel):
    solver: SolverConfig = SolverConfig()
    certify: CertifyConfig = CertifyConfig()
    store: StoreConfig = StoreConfig()

    @classmethod
    def build(cls, path: Optional[Union[str, Path]] = None, **overrides):
        raw = json.loads(cls().json())
        settings = read_config(path) if path is not None else {}
        settings.update(overrides)
        for key, value in settings.items():
            raw = update_nested_dict(raw, key, value)
        if os.environ.get(ENV_OUT):
            raw["store"]["root"] = os.environ[ENV_OUT]
        return cls(**raw)


class RecordStore(BaseModel):
    """Content-addressed JSON records: the id is the md5 of the canonical JSON."""

    root: Path

    @classmethod
    def from_config(cls, config: StoreConfig):
        return cls(root=Path(os.environ.get(ENV_OUT, config.root)))

    def path(self, kind: str, record_id: str, suffix: str = ".json") -> Path:
        return self.root / kind / f"{record_id}{suffix}"

    def put(self, record: BaseModel, kind: str) -> str:
        text = record.json(sort_keys=True)
        record_id = hash_text(text)
        path = self.path(kind, record_id)
        try:
            if path.exists():
                return record_id
            path.parent.mkdir(exist_ok=True, parents=True)
            with open(path, "w") as f:
                f.write(text)
        except OSError as e:
            raise StoreError(f"Cannot write record: {dict(path=str(path), error=str(e))}") from e
        print(dict(stored=kind, record_id=record_id))
        return record_id

    def get(self, kind: str, record_id: str) -> dict:
        path = self.path(kind, record_id)
        try:
            with open(path) as f:
                return json.load(f)
        except OSError as e:
            raise StoreError(f"Cannot read record: {dict(path=str(path), error=str(e))}") from e

    def put_frame(self, df: pd.DataFrame, kind: str, record_id: str) -> Path:
        path = self.path(kind, record_id, suffix=".csv")
        try:
            path.parent.mkdir(exist_ok=True, parents=True)
            df.to_csv(path, index=False)
        except OSError as e:
            raise StoreError(f"Cannot write table: {dict(path=str(path), error=str(e))}") from e
        return path

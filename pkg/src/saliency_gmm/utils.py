#!/usr/bin/env python3
"""
Utility functions and helpers for saliency-gmm
"""

import hashlib
import json
import logging
from pathlib import Path
from typing import Any, Iterable, List, Tuple

import numpy as np
from pydantic import BaseModel
from scipy.special import expit

from .core import IoError

logger = logging.getLogger(__name__)

SIGMOID_EPS = 1e-12


class NumericUtils:
    """Activation functions shared by the transform and its gradients"""

    @staticmethod
    def sigmoid(x: np.ndarray) -> np.ndarray:
        """Logistic sigmoid kept inside the open interval (0, 1)"""
        return np.clip(expit(x), SIGMOID_EPS, 1.0 - SIGMOID_EPS)

    @staticmethod
    def softplus(x: np.ndarray, beta: float = 1.0) -> np.ndarray:
        """(1/β)·log(1 + exp(βx)) without overflow"""
        return np.logaddexp(0.0, beta * np.asarray(x, dtype=np.float64)) / beta

    @staticmethod
    def softplus_grad(x: np.ndarray, beta: float = 1.0) -> np.ndarray:
        return expit(beta * np.asarray(x, dtype=np.float64))

    @staticmethod
    def inverse_softplus(y: float, beta: float = 1.0) -> float:
        """x such that softplus(x) == y, for y > 0"""
        if y <= 0:
            raise ValueError("softplus output must be positive")
        by = beta * y
        # log(expm1(by)) loses precision for large arguments
        return float((by + np.log(-np.expm1(-by))) / beta)

    @staticmethod
    def relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-12) -> np.ndarray:
        a = np.asarray(a, dtype=np.float64)
        b = np.asarray(b, dtype=np.float64)
        return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


class ParseUtils:
    """Command-line value parsing"""

    @staticmethod
    def parse_grid(text: str) -> Tuple[int, int]:
        """Parse 'HxW' (or a single 'N' for N x N) into cell counts"""
        parts = text.lower().replace("*", "x").split("x")
        try:
            values = [int(part) for part in parts]
        except ValueError:
            raise ValueError(f"Invalid grid format: {text}")
        if len(values) == 1:
            values = values * 2
        if len(values) != 2 or min(values) < 1:
            raise ValueError(f"Invalid grid format: {text}")
        return values[0], values[1]

    @staticmethod
    def parse_list(text: str, cast=float) -> List[Any]:
        return [cast(item.strip()) for item in text.split(",") if item.strip()]

    @staticmethod
    def parse_canvas(text: str) -> Tuple[int, int]:
        """Parse 'WIDTHxHEIGHT'"""
        width, height = ParseUtils.parse_grid(text)
        return width, height


class HashUtils:
    """Stable fingerprints of configuration objects"""

    @staticmethod
    def config_hash(config: BaseModel, length: int = 12) -> str:
        payload = config.model_dump_json()
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:length]


class FileUtils:
    """File operation utilities"""

    @staticmethod
    def ensure_directory(path: Path) -> None:
        """Ensure directory exists, create if not"""
        path.mkdir(parents=True, exist_ok=True)

    @staticmethod
    def save_json(data: Any, file_path: Path) -> None:
        """Save data as JSON file"""
        try:
            FileUtils.ensure_directory(file_path.parent)
            with open(file_path, 'w', encoding='utf-8') as f:
                json.dump(data, f, indent=2, default=str)
        except OSError as e:
            logger.error(f"Error saving JSON to {file_path}: {e}")
            raise IoError(f"cannot write {file_path}: {e}") from e

    @staticmethod
    def load_json(file_path: Path) -> Any:
        """Load data from JSON file"""
        try:
            with open(file_path, 'r', encoding='utf-8') as f:
                return json.load(f)
        except OSError as e:
            logger.error(f"Error loading JSON from {file_path}: {e}")
            raise IoError(f"cannot read {file_path}: {e}") from e

    @staticmethod
    def write_json_lines(records: Iterable[dict], file_path: Path) -> int:
        """Write one JSON object per line, returns the record count"""
        count = 0
        try:
            FileUtils.ensure_directory(file_path.parent)
            with open(file_path, 'w', encoding='utf-8') as f:
                for record in records:
                    f.write(json.dumps(record, sort_keys=True) + "\n")
                    count += 1
        except OSError as e:
            logger.error(f"Error writing records to {file_path}: {e}")
            raise IoError(f"cannot write {file_path}: {e}") from e
        return count

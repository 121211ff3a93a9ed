"""
Plug-in information measures of hash codes, in nats.

For a code matrix C (rows = instances, columns = bits) and labels Y:

    H(C) = sum_j H(c_j) - TC(C)
    I(Y:C) = sum_j H(c_j) - TC(C) - H(C|Y)

Entropies are computed from exact counts over the observed rows, so both
identities hold up to float rounding for any number of bits.
"""

from collections.abc import Sequence
from dataclasses import asdict, dataclass

import numpy as np
from judge_agent_forest.errors import LengthMismatch
from pydantic import BaseModel
from scipy.stats import entropy


class ObjectiveWeights(BaseModel):
    """Weights of the three terms of the code objective; (1, 1, 1) is I(Y:C)."""

    entropy: float = 1.0
    total_correlation: float = 1.0
    conditional_entropy: float = 1.0


@dataclass(frozen=True)
class CodeMetrics:
    bit_entropies: tuple[float, ...]
    joint_entropy: float
    total_correlation: float
    cond_entropy_given_labels: float
    mutual_info: float

    def weighted_objective(self, weights: ObjectiveWeights) -> float:
        return (
                weights.entropy * sum(self.bit_entropies)
                - weights.total_correlation * self.total_correlation
                - weights.conditional_entropy * self.cond_entropy_given_labels
        )

    def to_dict(self) -> dict:
        data = asdict(self)
        data["bit_entropies"] = list(self.bit_entropies)
        return data


def _as_rows(values: np.ndarray) -> np.ndarray:
    values = np.asarray(values)
    return values.reshape(len(values), -1) if values.ndim != 2 else values


def plugin_entropy(rows: np.ndarray) -> float:
    """Entropy of the empirical distribution of the rows of ``rows``."""
    rows = _as_rows(rows)
    if len(rows) == 0 or rows.shape[1] == 0:
        return 0.0
    _, counts = np.unique(rows, axis=0, return_counts=True)
    return float(entropy(counts))


def encode_labels(labels: Sequence) -> np.ndarray:
    """Map arbitrary label values to dense integer codes."""
    _, inverse = np.unique(np.asarray(labels, dtype=str), return_inverse=True)
    return inverse.reshape(-1)


def information_metrics(bit_matrix: np.ndarray, labels: Sequence) -> CodeMetrics:
    """
    :param bit_matrix: 0/1 matrix of shape (N, B); inactive bits already set to 0.
    :param labels: N label values.
    :raises LengthMismatch: if the number of rows and labels differ.
    """
    bits = np.asarray(bit_matrix, dtype=np.int8)
    if bits.ndim != 2:
        bits = bits.reshape(len(bits), -1)
    if len(bits) != len(labels):
        raise LengthMismatch(f"{len(bits)} codes but {len(labels)} labels")
    if len(bits) == 0:
        raise LengthMismatch("Metrics need at least one code")

    label_codes = encode_labels(labels)
    bit_entropies = tuple(plugin_entropy(bits[:, j]) for j in range(bits.shape[1]))
    joint = plugin_entropy(bits)
    total_correlation = sum(bit_entropies) - joint
    joint_with_labels = plugin_entropy(np.column_stack([bits, label_codes]))
    label_entropy = plugin_entropy(label_codes)
    cond_entropy = joint_with_labels - label_entropy
    mutual_info = sum(bit_entropies) - total_correlation - cond_entropy
    return CodeMetrics(
        bit_entropies=bit_entropies,
        joint_entropy=joint,
        total_correlation=total_correlation,
        cond_entropy_given_labels=cond_entropy,
        mutual_info=mutual_info,
    )


def code_information_metrics(codes: Sequence, labels: Sequence) -> CodeMetrics:
    """
    Metrics of a sequence of ``HashCode``. Inactive bits count as 0.
    :raises LengthMismatch: on mismatched lengths or codes of different widths.
    """
    widths = {len(code.bits) for code in codes}
    if len(widths) > 1:
        raise LengthMismatch(f"Codes have different lengths: {sorted(widths)}")
    width = widths.pop() if widths else 0
    matrix = np.zeros((len(codes), width), dtype=np.int8)
    for i, code in enumerate(codes):
        matrix[i] = code.effective_bits
    return information_metrics(matrix, labels)


def bit_redundancy(new_bit: np.ndarray, existing_bits: np.ndarray) -> float:
    """
    Mutual information between one new bit and the joint code of the existing
    bits, i.e. the total correlation the new bit adds.
    """
    new_bit = _as_rows(new_bit)
    existing = _as_rows(existing_bits)
    if existing.shape[1] == 0:
        return 0.0
    return (
            plugin_entropy(new_bit)
            + plugin_entropy(existing)
            - plugin_entropy(np.column_stack([existing, new_bit]))
    )

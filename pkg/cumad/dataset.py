"""
数据集模块

读取 N-BaIoT 格式的特征 CSV，对良性数据做三等分划分，构造类别平衡的测试集，
并生成用于桌面规模实验的合成良性/攻击数据。
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from .errors import DatasetError
from .models.dataset import Label, SyntheticSpec

logger = logging.getLogger(__name__)

FEATURE_DIM = 115
LABEL_COLUMN = "label"
DEVICE_COLUMN = "device_id"

PathLike = Union[str, Path]


@dataclass
class FeatureMatrix:
    """一台设备的特征矩阵，每行一个报文快照"""

    values: np.ndarray
    device_id: str
    labels: Optional[np.ndarray] = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim == 1 and values.size == 0:
            values = values.reshape(0, FEATURE_DIM)
        if values.ndim != 2 or values.shape[1] == 0:
            raise DatasetError(f"特征矩阵必须是二维且列数大于 0，实际形状 {values.shape}")
        if not np.all(np.isfinite(values)):
            bad_row, bad_col = np.argwhere(~np.isfinite(values))[0]
            raise DatasetError(
                f"第 {bad_row + 1} 行第 {bad_col + 1} 列不是有限实数",
                row=int(bad_row) + 1,
                column=int(bad_col) + 1,
            )
        self.values = values
        if self.labels is not None:
            labels = np.asarray(self.labels, dtype=np.int8)
            if labels.shape != (values.shape[0],):
                raise DatasetError(
                    f"标签数量 {labels.shape} 与行数 {values.shape[0]} 不一致"
                )
            if not np.all((labels == 0) | (labels == 1)):
                raise DatasetError("标签只能是 0（良性）或 1（攻击）")
            self.labels = labels

    def __len__(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    def rows(self, index: Union[np.ndarray, Sequence[int], slice]) -> "FeatureMatrix":
        """按行索引取子矩阵，保留标签"""
        labels = self.labels[index] if self.labels is not None else None
        return FeatureMatrix(self.values[index], self.device_id, labels)

    def with_label(self, label: Label) -> "FeatureMatrix":
        labels = np.full(len(self), label.code, dtype=np.int8)
        return FeatureMatrix(self.values, self.device_id, labels)

    def class_rows(self, label: Label) -> "FeatureMatrix":
        if self.labels is None:
            raise DatasetError("矩阵没有标签")
        return self.rows(np.flatnonzero(self.labels == label.code))


@dataclass
class DatasetSplit:
    """良性数据划分：D_t / D_v / 保留良性集，以及可选的平衡测试集 D_tst"""

    train: FeatureMatrix
    validation: FeatureMatrix
    holdout_benign: FeatureMatrix
    test: Optional[FeatureMatrix] = None

    @property
    def calibration_set(self) -> FeatureMatrix:
        """D = D_t ∪ D_v"""
        return concat([self.train, self.validation])

    def sizes(self) -> Tuple[int, int, int]:
        return len(self.train), len(self.validation), len(self.holdout_benign)


def concat(matrices: Sequence[FeatureMatrix]) -> FeatureMatrix:
    """按顺序拼接同一设备的矩阵"""
    if not matrices:
        raise DatasetError("没有可拼接的矩阵")
    device_ids = {m.device_id for m in matrices}
    if len(device_ids) != 1:
        raise DatasetError(f"不能拼接不同设备的矩阵: {sorted(device_ids)}")
    values = np.vstack([m.values for m in matrices])
    if all(m.labels is not None for m in matrices):
        labels = np.concatenate([m.labels for m in matrices])
    else:
        labels = None
    return FeatureMatrix(values, matrices[0].device_id, labels)


def _is_number(cell: str) -> bool:
    try:
        float(cell)
        return True
    except (TypeError, ValueError):
        return False


def _read_table(path: PathLike) -> Tuple[pd.DataFrame, Optional[List[str]], int]:
    """读取原始字符串表格，返回 (数据, 表头或 None, 首个数据行的文件行号)"""
    path = Path(path)
    if not path.exists():
        raise DatasetError(f"文件不存在: {path}")
    try:
        raw = pd.read_csv(
            path,
            header=None,
            dtype=str,
            keep_default_na=False,
            skip_blank_lines=True,
            encoding="utf-8",
        )
    except pd.errors.EmptyDataError:
        raise DatasetError(f"文件为空: {path}")
    except pd.errors.ParserError as e:
        raise DatasetError(f"CSV 解析失败 {path}: {e}")

    if raw.empty:
        raise DatasetError(f"文件为空: {path}")

    first = [str(c).strip() for c in raw.iloc[0].tolist()]
    header = None
    if not any(_is_number(c) for c in first if c != ""):
        header = first
        raw = raw.iloc[1:].reset_index(drop=True)
    return raw, header, 2 if header is not None else 1


def _to_numeric(block: pd.DataFrame, first_line: int) -> np.ndarray:
    numeric = block.apply(pd.to_numeric, errors="coerce")
    invalid = numeric.isna().to_numpy() | ~np.isfinite(numeric.to_numpy(dtype=np.float64))
    if invalid.any():
        row, col = np.argwhere(invalid)[0]
        cell = block.iat[row, col]
        raise DatasetError(
            f"第 {first_line + row} 行第 {col + 1} 列不是数值: {cell!r}",
            row=first_line + int(row),
            column=int(col) + 1,
        )
    return numeric.to_numpy(dtype=np.float64)


def _check_width(raw: pd.DataFrame, expected: int, first_line: int):
    if raw.shape[1] != expected:
        raise DatasetError(
            f"第 {first_line} 行有 {raw.shape[1]} 列，期望 {expected} 列",
            row=first_line,
        )
    # 短行会被补成 NaN
    short = raw.isna().any(axis=1).to_numpy()
    if short.any():
        row = int(np.flatnonzero(short)[0])
        count = int(raw.iloc[row].notna().sum())
        raise DatasetError(
            f"第 {first_line + row} 行有 {count} 列，期望 {expected} 列",
            row=first_line + row,
        )


def load_feature_csv(
    path: PathLike, label: Label, device_id: str, dim: int = FEATURE_DIM
) -> FeatureMatrix:
    """读取特征 CSV，每个数据行对应一个 FeatureVector（保持文件顺序）

    文件带 label 列时该列被忽略，标签以参数 label 为准。
    """
    raw, header, first_line = _read_table(path)
    if raw.empty:
        raise DatasetError(f"文件没有数据行: {path}")
    if header is not None and header[-1] == LABEL_COLUMN:
        raw = raw.iloc[:, :-1]
    _check_width(raw, dim, first_line)
    values = _to_numeric(raw, first_line)
    matrix = FeatureMatrix(values, device_id).with_label(Label(label))
    logger.info(f"读取特征文件 {path}: {len(matrix)} 行, 设备 {device_id}")
    return matrix


def load_labeled_csv(path: PathLike, device_id: str, dim: int = FEATURE_DIM) -> FeatureMatrix:
    """读取带 label 列的特征 CSV（评估与合成数据导出使用）"""
    raw, header, first_line = _read_table(path)
    if header is None or header[-1] != LABEL_COLUMN:
        raise DatasetError(f"缺少 {LABEL_COLUMN} 列: {path}")
    if raw.empty:
        raise DatasetError(f"文件没有数据行: {path}")
    _check_width(raw, dim + 1, first_line)
    values = _to_numeric(raw, first_line)
    labels = values[:, -1]
    if not np.all((labels == 0) | (labels == 1)):
        row = int(np.flatnonzero((labels != 0) & (labels != 1))[0])
        raise DatasetError(f"第 {first_line + row} 行的 label 不是 0 或 1", row=first_line + row)
    return FeatureMatrix(values[:, :-1], device_id, labels.astype(np.int8))


def load_device_stream(path: PathLike, dim: int = FEATURE_DIM) -> Tuple[List[str], np.ndarray]:
    """读取带 device_id 首列的检测流 CSV，返回 (设备列表, 特征矩阵)"""
    raw, header, first_line = _read_table(path)
    if header is None or header[0] != DEVICE_COLUMN:
        raise DatasetError(f"检测流文件首列必须是 {DEVICE_COLUMN}: {path}")
    if raw.empty:
        return [], np.empty((0, dim))
    has_label = header[-1] == LABEL_COLUMN
    _check_width(raw, dim + 1 + int(has_label), first_line)
    devices = [str(d).strip() for d in raw.iloc[:, 0].tolist()]
    features = raw.iloc[:, 1 : dim + 1]
    values = _to_numeric(features, first_line)
    return devices, values


def feature_header(dim: int) -> List[str]:
    if dim == FEATURE_DIM:
        from .features import feature_names

        return feature_names()
    return [f"f{i}" for i in range(dim)]


def write_feature_csv(
    matrix: FeatureMatrix, path: PathLike, with_label: bool = False
) -> Path:
    """写出特征 CSV（带表头，可选 label 列：0 良性，1 攻击）"""
    path = Path(path)
    frame = pd.DataFrame(matrix.values, columns=feature_header(matrix.dim))
    if with_label:
        if matrix.labels is None:
            raise DatasetError("矩阵没有标签，不能写出 label 列")
        frame[LABEL_COLUMN] = matrix.labels.astype(int)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format="%.17g")
    logger.info(f"写出特征文件 {path}: {len(matrix)} 行")
    return path


def write_device_stream(
    rows: Sequence[Tuple[str, np.ndarray]], path: PathLike, dim: int = FEATURE_DIM
) -> Path:
    """写出 device_id + 特征的检测流 CSV"""
    path = Path(path)
    values = np.array([np.asarray(v, dtype=np.float64) for _, v in rows]).reshape(-1, dim)
    frame = pd.DataFrame(values, columns=feature_header(dim))
    frame.insert(0, DEVICE_COLUMN, [d for d, _ in rows])
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format="%.17g")
    return path


def _part_sizes(n: int, parts: int = 3) -> List[int]:
    base, remainder = divmod(n, parts)
    return [base + (1 if i < remainder else 0) for i in range(parts)]


def partition_benign(
    benign: FeatureMatrix, seed: int, chronological: bool = False
) -> DatasetSplit:
    """将良性数据等分为 D_t、D_v 和保留良性集，余数行依次分给靠前的部分"""
    n = len(benign)
    if n < 3:
        raise DatasetError(f"良性数据至少需要 3 行，实际 {n} 行")

    if chronological:
        order = np.arange(n)
    else:
        order = np.random.default_rng(seed).permutation(n)

    sizes = _part_sizes(n)
    bounds = np.cumsum([0] + sizes)
    parts = [benign.rows(order[bounds[i] : bounds[i + 1]]) for i in range(3)]
    logger.info(
        f"良性数据划分完成 ({'时间顺序' if chronological else '随机'}): "
        f"{sizes[0]}/{sizes[1]}/{sizes[2]}"
    )
    return DatasetSplit(train=parts[0], validation=parts[1], holdout_benign=parts[2])


def build_balanced_test(
    holdout_benign: FeatureMatrix, attack: FeatureMatrix, seed: int
) -> FeatureMatrix:
    """保留良性集 + 等量随机抽取的攻击数据，组成平衡测试集 D_tst"""
    k = len(holdout_benign)
    if len(attack) < k:
        raise DatasetError(f"攻击数据不足: {len(attack)} < {k}")

    picked = np.sort(np.random.default_rng(seed).choice(len(attack), size=k, replace=False))
    benign_part = holdout_benign.with_label(Label.BENIGN)
    attack_part = FeatureMatrix(
        attack.values[picked], holdout_benign.device_id
    ).with_label(Label.ATTACK)
    test = concat([benign_part, attack_part])
    logger.info(f"平衡测试集构造完成: 良性 {k} 行, 攻击 {k} 行")
    return test


def generate_synthetic(spec: SyntheticSpec) -> Tuple[FeatureMatrix, FeatureMatrix]:
    """
    良性样本取单公共因子相关正态分布（单位方差，两两相关系数 benign_correlation）。

    攻击样本不含公共因子：各特征独立、单位方差，均值平移 attack_shift。
    """
    rng = np.random.default_rng(spec.seed)
    loading = np.sqrt(spec.benign_correlation)
    noise = np.sqrt(1.0 - spec.benign_correlation)

    factor = rng.standard_normal((spec.n_benign, 1))
    benign_values = loading * factor + noise * rng.standard_normal((spec.n_benign, spec.dim))
    benign = FeatureMatrix(benign_values, spec.device_id).with_label(Label.BENIGN)
    attack_values = rng.standard_normal((spec.n_attack, spec.dim)) + spec.attack_shift
    attack = FeatureMatrix(attack_values, spec.device_id).with_label(Label.ATTACK)
    logger.info(
        f"合成数据生成完成: 良性 {spec.n_benign}, 攻击 {spec.n_attack}, "
        f"维度 {spec.dim}, 相关系数 {spec.benign_correlation}, 平移 {spec.attack_shift}"
    )
    return benign, attack

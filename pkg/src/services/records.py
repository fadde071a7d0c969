"""파이프라인 전 단계가 공유하는 레이블 특징 컨테이너"""
from dataclasses import dataclass

import numpy as np

from ..utils.errors import DataError, DimensionError


@dataclass
class FeatureSet:
    """한 데이터 종류의 예제를 열 단위로 저장

    i번째 행이 예제 하나: X[i] 페이로드 (정적 벡터 또는 (steps, features) 프레임),
    y[i] 레이블, provenance[i] 출처 ('real' / 'synthetic'), recordings[i] 녹음 ID.
    """
    X: np.ndarray
    y: np.ndarray
    provenance: np.ndarray = None
    recordings: np.ndarray = None
    partition: str = 'train'

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64).reshape(-1)
        if self.X.ndim not in (2, 3):
            raise DimensionError(f"features must be (n, F) or (n, T, F), got {self.X.shape}")
        if self.X.shape[0] != self.y.shape[0]:
            raise DimensionError(f"{self.X.shape[0]} payloads but {self.y.shape[0]} labels")
        n = self.y.shape[0]
        if self.provenance is None:
            self.provenance = np.full(n, 'real', dtype=object)
        if self.recordings is None:
            self.recordings = np.array([f'{self.partition}_{i:05d}' for i in range(n)], dtype=object)
        self.provenance = np.asarray(self.provenance, dtype=object)
        self.recordings = np.asarray(self.recordings, dtype=object)
        if self.provenance.shape != (n,) or self.recordings.shape != (n,):
            raise DimensionError("provenance and recording ids need one entry per example")

    def __len__(self):
        return self.y.shape[0]

    @property
    def data_kind(self):
        return 'static_vector' if self.X.ndim == 2 else 'sequence'

    @property
    def feature_dim(self):
        return self.X.shape[-1]

    @property
    def payload_shape(self):
        return self.X.shape[1:]

    def class_counts(self, num_classes):
        return np.bincount(self.y, minlength=num_classes)[:num_classes]

    def subset(self, indices):
        indices = np.asarray(indices, dtype=np.int64)
        return FeatureSet(self.X[indices], self.y[indices], self.provenance[indices],
                          self.recordings[indices], self.partition)

    def concat(self, other):
        if other.payload_shape != self.payload_shape:
            raise DimensionError(f"cannot merge payloads {other.payload_shape} into {self.payload_shape}")
        return FeatureSet(
            np.concatenate([self.X, other.X]),
            np.concatenate([self.y, other.y]),
            np.concatenate([self.provenance, other.provenance]),
            np.concatenate([self.recordings, other.recordings]),
            self.partition,
        )

    def check_labels(self, num_classes):
        if len(self) == 0:
            raise DataError("feature set is empty")
        if self.y.min() < 0 or self.y.max() >= num_classes:
            raise DataError(f"labels must lie in [0, {num_classes}), got range [{self.y.min()}, {self.y.max()}]")

import json
import os
import struct
from pathlib import Path

import numpy as np

FRAME_MAGIC = b'SGFR'
_FRAME_HEADER = struct.Struct('<iiiII')


def ensure_directory(directory):
    """디렉토리가 없으면 생성"""
    if not os.path.exists(directory):
        os.makedirs(directory)
    return Path(directory)


def spawn_seeds(seed, count):
    """마스터 시드 하나에서 독립 정수 시드 `count`개 파생"""
    children = np.random.SeedSequence(seed).spawn(count)
    return [int(child.generate_state(1, dtype=np.uint32)[0]) for child in children]


def write_json(data, path):
    """키 정렬 JSON 문서 쓰기 (바이트 단위로 안정적인 출력)"""
    path = Path(path)
    ensure_directory(path.parent)
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(data, f, indent=2, sort_keys=True)
        f.write('\n')
    return path


def read_json(path):
    with open(path, 'r', encoding='utf-8') as f:
        return json.load(f)


def encode_tensor(array):
    """배열을 shape + 행 우선 float.hex 값으로 인코딩 (비트 단위 보존)"""
    array = np.asarray(array, dtype=np.float64)
    return {
        'shape': list(array.shape),
        'values': [float(v).hex() for v in array.ravel(order='C')],
    }


def decode_tensor(document):
    values = np.array([float.fromhex(v) for v in document['values']], dtype=np.float64)
    return values.reshape(document['shape'])


def write_frames(path, frames, labels=None, members=None, flags=None):
    """2-D float64 프레임을 길이 접두 바이너리 컨테이너에 쓰기

    프레임마다 (label, member, flag) int32 세 개, uint32 rows/cols,
    rows*cols개의 little-endian float64 값 순서.
    """
    n = len(frames)
    labels = [-1] * n if labels is None else labels
    members = [-1] * n if members is None else members
    flags = [-1] * n if flags is None else flags
    path = Path(path)
    ensure_directory(path.parent)
    with open(path, 'wb') as f:
        f.write(FRAME_MAGIC)
        f.write(struct.pack('<I', n))
        for frame, label, member, flag in zip(frames, labels, members, flags):
            frame = np.ascontiguousarray(frame, dtype='<f8')
            if frame.ndim != 2:
                raise ValueError(f"frame must be 2-D, got shape {frame.shape}")
            rows, cols = frame.shape
            f.write(_FRAME_HEADER.pack(int(label), int(member), int(flag), rows, cols))
            f.write(frame.tobytes())
    return path


def read_frames(path):
    """바이너리 컨테이너를 (frames, labels, members, flags)로 읽기"""
    with open(path, 'rb') as f:
        if f.read(4) != FRAME_MAGIC:
            raise ValueError(f"{path} is not a frame container")
        (n,) = struct.unpack('<I', f.read(4))
        frames, labels, members, flags = [], [], [], []
        for _ in range(n):
            header = f.read(_FRAME_HEADER.size)
            if len(header) != _FRAME_HEADER.size:
                raise ValueError(f"{path} is truncated")
            label, member, flag, rows, cols = _FRAME_HEADER.unpack(header)
            payload = f.read(rows * cols * 8)
            if len(payload) != rows * cols * 8:
                raise ValueError(f"{path} is truncated")
            frames.append(np.frombuffer(payload, dtype='<f8').reshape(rows, cols).astype(np.float64))
            labels.append(label)
            members.append(member)
            flags.append(flag)
    return frames, labels, members, flags

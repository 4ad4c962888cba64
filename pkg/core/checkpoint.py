"""
分块二进制检查点

文件格式（全部小端）：
    "EVA1" + u32 格式版本
    若干块：4字节标签 + u64 负载长度 + 负载
    以 "END!" 块结束（负载为空）

每个负载的结构相同：
    u64 JSON长度 + UTF-8 JSON（sort_keys，紧凑分隔符）
    JSON 中 "arrays" 列出数组名，随后按顺序排列数组：
    u32 dtype代码 + u32 维数 + 每维 u32 + 小端数据

写出结果只取决于保存的状态，同一状态两次保存逐字节相同。
"""

import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from core.errors import CheckpointError


logger = logging.getLogger(__name__)

MAGIC = b"EVA1"
FORMAT_VERSION = 1
END_TAG = b"END!"

DTYPE_CODES: dict[str, int] = {
    "float32": 1,
    "float64": 2,
    "int64": 3,
    "bool": 4,
    "uint8": 5,
}
CODE_DTYPES = {code: np.dtype(name) for name, code in DTYPE_CODES.items()}

REQUIRED_TAGS = (b"CONF", b"NETW", b"TGTN", b"OPTM", b"RPLY", b"RNGS", b"STAT")
OPTIONAL_TAGS = (b"VBUF", b"ENVS")
KNOWN_TAGS = frozenset(REQUIRED_TAGS + OPTIONAL_TAGS)


@dataclass
class CheckpointData:
    """检查点中保存的全部状态"""
    config: dict[str, Any]
    network: list[np.ndarray]
    target_network: list[np.ndarray]
    optimizer_step: int
    optimizer_arrays: list[np.ndarray]
    replay_meta: dict[str, Any]
    replay_arrays: dict[str, np.ndarray]
    rng_states: dict[str, Any]
    stats: dict[str, Any]
    value_buffer_meta: dict[str, Any] | None = None
    value_buffer_arrays: dict[str, np.ndarray] | None = None
    executor_state: dict[str, Any] | None = None
    extra: dict[str, Any] = field(default_factory=dict)


def _encode_array(arr: np.ndarray) -> bytes:
    arr = np.asarray(arr)
    name = arr.dtype.name
    if name not in DTYPE_CODES:
        raise CheckpointError(f"unsupported array dtype '{name}'")
    header = struct.pack("<II", DTYPE_CODES[name], arr.ndim)
    header += struct.pack(f"<{arr.ndim}I", *arr.shape)
    data = np.ascontiguousarray(arr).astype(arr.dtype.newbyteorder("<"), copy=False).tobytes()
    return header + data


def _encode_payload(meta: Any, arrays: dict[str, np.ndarray] | None = None) -> bytes:
    arrays = arrays or {}
    document = {"meta": meta, "arrays": list(arrays)}
    text = json.dumps(document, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [struct.pack("<Q", len(text)), text]
    parts.extend(_encode_array(arrays[name]) for name in arrays)
    return b"".join(parts)


class _Reader:
    """在字节串上顺序读取，越界时报告截断"""

    def __init__(self, data: bytes, context: str):
        self.data = data
        self.pos = 0
        self.context = context

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError(f"truncated {self.context}: needed {n} bytes at offset {self.pos}")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str) -> tuple:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def _decode_array(reader: _Reader) -> np.ndarray:
    code, ndim = reader.unpack("<II")
    if code not in CODE_DTYPES:
        raise CheckpointError(f"unknown dtype code {code} in {reader.context}")
    shape = reader.unpack(f"<{ndim}I") if ndim else ()
    dtype = CODE_DTYPES[code].newbyteorder("<")
    count = int(np.prod(shape, dtype=np.int64)) if ndim else 1
    raw = reader.take(count * dtype.itemsize)
    return np.frombuffer(raw, dtype=dtype).astype(CODE_DTYPES[code]).reshape(shape)


def _decode_payload(payload: bytes, tag: str) -> tuple[Any, dict[str, np.ndarray]]:
    reader = _Reader(payload, f"chunk {tag}")
    (length,) = reader.unpack("<Q")
    try:
        document = json.loads(reader.take(length).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"corrupt metadata in chunk {tag}: {e}") from e
    arrays = {name: _decode_array(reader) for name in document["arrays"]}
    if reader.pos != len(payload):
        raise CheckpointError(f"chunk {tag} has {len(payload) - reader.pos} trailing bytes")
    return document["meta"], arrays


def _array_list(arrays: list[np.ndarray]) -> dict[str, np.ndarray]:
    return {f"p{i:03d}": a for i, a in enumerate(arrays)}


def _from_array_list(arrays: dict[str, np.ndarray]) -> list[np.ndarray]:
    return [arrays[name] for name in sorted(arrays)]


def encode_checkpoint(data: CheckpointData) -> bytes:
    """把检查点编码为字节串"""
    chunks: list[tuple[bytes, bytes]] = [
        (b"CONF", _encode_payload(data.config)),
        (b"NETW", _encode_payload(None, _array_list(data.network))),
        (b"TGTN", _encode_payload(None, _array_list(data.target_network))),
        (b"OPTM", _encode_payload({"t": data.optimizer_step}, _array_list(data.optimizer_arrays))),
        (b"RPLY", _encode_payload(data.replay_meta, data.replay_arrays)),
        (b"RNGS", _encode_payload(data.rng_states)),
        (b"STAT", _encode_payload({"stats": data.stats, "extra": data.extra})),
    ]
    if data.value_buffer_meta is not None:
        chunks.append((b"VBUF", _encode_payload(data.value_buffer_meta, data.value_buffer_arrays)))
    if data.executor_state is not None:
        chunks.append((b"ENVS", _encode_payload(data.executor_state)))

    parts = [MAGIC, struct.pack("<I", FORMAT_VERSION)]
    for tag, payload in chunks:
        parts.extend([tag, struct.pack("<Q", len(payload)), payload])
    parts.extend([END_TAG, struct.pack("<Q", 0)])
    return b"".join(parts)


def decode_checkpoint(blob: bytes) -> CheckpointData:
    """
    从字节串解码检查点

    Raises:
        CheckpointError: 魔数/版本不符、块被截断、未知标签或缺少必需块
    """
    reader = _Reader(blob, "checkpoint")
    if reader.take(4) != MAGIC:
        raise CheckpointError("not an EVA checkpoint (bad magic)")
    (version,) = reader.unpack("<I")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version} (expected {FORMAT_VERSION})")

    chunks: dict[bytes, tuple[Any, dict[str, np.ndarray]]] = {}
    while True:
        tag = reader.take(4)
        (length,) = reader.unpack("<Q")
        if tag == END_TAG:
            break
        tag_name = tag.decode("ascii", errors="replace")
        if tag not in KNOWN_TAGS:
            raise CheckpointError(f"unknown checkpoint chunk tag '{tag_name}'")
        if tag in chunks:
            raise CheckpointError(f"duplicate checkpoint chunk tag '{tag_name}'")
        chunks[tag] = _decode_payload(reader.take(length), tag_name)

    for tag in REQUIRED_TAGS:
        if tag not in chunks:
            name = tag.decode("ascii")
            if tag == b"RPLY":
                raise CheckpointError("checkpoint has no replay buffer chunk 'RPLY'")
            raise CheckpointError(f"checkpoint is missing required chunk '{name}'")

    stat_meta, _ = chunks[b"STAT"]
    optimizer_meta, optimizer_arrays = chunks[b"OPTM"]
    vbuf_meta, vbuf_arrays = chunks.get(b"VBUF", (None, None))
    envs_meta, _ = chunks.get(b"ENVS", (None, None))
    return CheckpointData(
        config=chunks[b"CONF"][0],
        network=_from_array_list(chunks[b"NETW"][1]),
        target_network=_from_array_list(chunks[b"TGTN"][1]),
        optimizer_step=int(optimizer_meta["t"]),
        optimizer_arrays=_from_array_list(optimizer_arrays),
        replay_meta=chunks[b"RPLY"][0],
        replay_arrays=chunks[b"RPLY"][1],
        rng_states=chunks[b"RNGS"][0],
        stats=stat_meta["stats"],
        value_buffer_meta=vbuf_meta,
        value_buffer_arrays=vbuf_arrays,
        executor_state=envs_meta,
        extra=stat_meta.get("extra") or {},
    )


def checkpoint_save(path: str | Path, data: CheckpointData) -> Path:
    """
    写出检查点

    Args:
        path: 目标文件路径（父目录自动创建）
        data: 检查点内容

    Returns:
        写出的路径
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    blob = encode_checkpoint(data)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(blob)
    tmp.replace(path)
    logger.info(f"Saved checkpoint to {path} ({len(blob)} bytes)")
    return path


def checkpoint_load(path: str | Path) -> CheckpointData:
    """
    读取检查点

    Raises:
        FileNotFoundError: 文件不存在
        CheckpointError: 格式错误
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Checkpoint not found: {path}")
    data = decode_checkpoint(path.read_bytes())
    logger.info(f"Loaded checkpoint from {path}")
    return data

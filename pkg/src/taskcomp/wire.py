"""Byte-exact frame format for latent vectors plus a loopback decoder service.

Frame layout (little-endian throughout):

    offset  size  field
    0       4     magic "TBNK"
    4       2     version (u16, = 1)
    6       2     z_dim   (u16, number of scalars, 1..65535)
    8       1     dtype   (u8: 0 = f32, 1 = f64)
    9       4     sequence_id (u32)
    13      -     payload: z_dim scalars
    end     4     CRC32 of header + payload (u32)

Total size is 13 + z_dim * (4 or 8) + 4 bytes exactly.  Error replies use
the same 13-byte header shape with magic "TERR":

    magic "TERR" | version u16 | message length u16 | code u8 | sequence u32
    | message bytes | CRC32

The server reads one frame per request and answers with either a
prediction frame (same dtype as the request) or an error frame; the
length fields keep the stream in sync across malformed-but-well-framed
requests.
"""

from dataclasses import dataclass

import socket
import struct
import threading
import zlib

import numpy as np

from .errors import (
    BadMagic,
    BadVersion,
    ChecksumMismatch,
    NonFinitePayload,
    RemoteFrameError,
    TooLarge,
    Truncated,
)
from .training import CodesignModel, server_predict

MAGIC = b"TBNK"
ERROR_MAGIC = b"TERR"
VERSION = 1
DTYPE_F32 = 0
DTYPE_F64 = 1

_HEADER = struct.Struct("<4sHHBI")
_ERR_HEADER = struct.Struct("<4sHHBI")
HEADER_SIZE = _HEADER.size   # 13

ERR_BAD_MAGIC = 1
ERR_BAD_VERSION = 2
ERR_CHECKSUM = 3
ERR_TRUNCATED = 4
ERR_TOO_LARGE = 5
ERR_NON_FINITE = 6
ERR_INTERNAL = 7

_ERROR_CODES = {
    BadMagic: ERR_BAD_MAGIC,
    BadVersion: ERR_BAD_VERSION,
    ChecksumMismatch: ERR_CHECKSUM,
    Truncated: ERR_TRUNCATED,
    TooLarge: ERR_TOO_LARGE,
    NonFinitePayload: ERR_NON_FINITE,
}


def _scalar_size(dtype):
    if dtype == DTYPE_F32:
        return 4
    if dtype == DTYPE_F64:
        return 8
    raise ValueError(f"unknown dtype tag {dtype}")


def frame_size(z_dim, dtype=DTYPE_F32):
    return HEADER_SIZE + z_dim * _scalar_size(dtype) + 4


def encode_frame(z, sequence_id, dtype=DTYPE_F32) -> bytes:
    """Serialize vector *z*; f32 mode quantizes by round-to-nearest."""
    _scalar_size(dtype)
    z = np.asarray(z, dtype=np.float64).reshape(-1)
    if z.size < 1 or z.size > 0xFFFF:
        raise TooLarge(f"payload length {z.size} outside 1..65535")
    if not np.isfinite(z).all():
        raise NonFinitePayload("payload contains NaN or Inf")
    payload = z.astype("<f4" if dtype == DTYPE_F32 else "<f8").tobytes()
    header = _HEADER.pack(MAGIC, VERSION, z.size, dtype, sequence_id & 0xFFFFFFFF)
    checksum = zlib.crc32(header + payload) & 0xFFFFFFFF
    return header + payload + struct.pack("<I", checksum)


def decode_frame(buf):
    """Parse a frame; returns (z as float64 array, sequence_id)."""
    if len(buf) < HEADER_SIZE:
        raise Truncated(f"frame shorter than header: {len(buf)} bytes")
    magic, version, z_dim, dtype, seq = _HEADER.unpack_from(buf, 0)
    if magic != MAGIC:
        raise BadMagic(f"magic {magic!r}")
    if version != VERSION:
        raise BadVersion(f"version {version}")
    try:
        total = frame_size(z_dim, dtype)
    except ValueError as exc:
        raise BadVersion(str(exc)) from exc
    if z_dim < 1:
        raise TooLarge("z_dim must be >= 1")
    if len(buf) < total:
        raise Truncated(f"frame needs {total} bytes, got {len(buf)}")
    if len(buf) > total:
        raise Truncated(f"frame declares {total} bytes, got {len(buf)}")
    stored = struct.unpack_from("<I", buf, total - 4)[0]
    actual = zlib.crc32(buf[:total - 4]) & 0xFFFFFFFF
    if stored != actual:
        raise ChecksumMismatch(f"stored {stored:#010x}, computed {actual:#010x}")
    kind = "<f4" if dtype == DTYPE_F32 else "<f8"
    z = np.frombuffer(buf, dtype=kind, count=z_dim, offset=HEADER_SIZE)
    return z.astype(np.float64), seq


def encode_error_frame(code, sequence_id, message) -> bytes:
    msg = message.encode("utf-8")[:0xFFFF]
    header = _ERR_HEADER.pack(ERROR_MAGIC, VERSION, len(msg), code,
                              sequence_id & 0xFFFFFFFF)
    checksum = zlib.crc32(header + msg) & 0xFFFFFFFF
    return header + msg + struct.pack("<I", checksum)


def decode_error_frame(buf):
    magic, version, msg_len, code, seq = _ERR_HEADER.unpack_from(buf, 0)
    if magic != ERROR_MAGIC:
        raise BadMagic(f"magic {magic!r}")
    if version != VERSION:
        raise BadVersion(f"version {version}")
    total = HEADER_SIZE + msg_len + 4
    if len(buf) != total:
        raise Truncated(f"error frame needs {total} bytes, got {len(buf)}")
    stored = struct.unpack_from("<I", buf, total - 4)[0]
    if stored != (zlib.crc32(buf[:total - 4]) & 0xFFFFFFFF):
        raise ChecksumMismatch("error frame checksum")
    message = buf[HEADER_SIZE:HEADER_SIZE + msg_len].decode("utf-8", "replace")
    return code, message, seq


@dataclass
class BandwidthReport:
    raw_bytes_per_sample: int
    compressed_bytes_per_sample: int
    samples_sent: int

    @property
    def ratio(self):
        return self.raw_bytes_per_sample / self.compressed_bytes_per_sample

    def as_dict(self):
        return {
            "raw_bytes_per_sample": self.raw_bytes_per_sample,
            "compressed_bytes_per_sample": self.compressed_bytes_per_sample,
            "ratio": self.ratio,
            "samples_sent": self.samples_sent,
        }


def _recv_exact(conn, size):
    chunks = []
    remaining = size
    while remaining:
        chunk = conn.recv(remaining)
        if not chunk:
            return None
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)


class DecoderServer:
    """Hosts decoder + task side of a co-design model on a local TCP socket.

    The model is immutable after load, so each request is answered without
    locking.  Connections are handled one worker thread apiece; shutdown is
    cooperative, checked between frames.
    """

    def __init__(self, model: CodesignModel, host="127.0.0.1", port=0):
        self.model = model
        self._sock = socket.create_server((host, port))
        self.address = self._sock.getsockname()
        self._stop = threading.Event()
        self._accept_thread = None
        self._workers = []

    def start(self):
        self._sock.settimeout(0.2)
        self._accept_thread = threading.Thread(target=self._accept_loop, daemon=True)
        self._accept_thread.start()
        return self

    def _accept_loop(self):
        while not self._stop.is_set():
            try:
                conn, _ = self._sock.accept()
            except socket.timeout:
                continue
            except OSError:
                break
            worker = threading.Thread(target=self._serve_conn, args=(conn,), daemon=True)
            worker.start()
            self._workers.append(worker)

    def _serve_conn(self, conn):
        with conn:
            conn.settimeout(10.0)
            while not self._stop.is_set():
                try:
                    header = _recv_exact(conn, HEADER_SIZE)
                except (socket.timeout, OSError):
                    return
                if header is None:
                    return
                magic, version, z_dim, dtype, seq = _HEADER.unpack_from(header, 0)
                try:
                    body_len = z_dim * _scalar_size(dtype) + 4
                except ValueError:
                    conn.sendall(encode_error_frame(ERR_BAD_VERSION, seq,
                                                    f"unknown dtype {dtype}"))
                    return
                try:
                    body = _recv_exact(conn, body_len)
                except (socket.timeout, OSError):
                    return
                if body is None:
                    return
                reply = self._handle_frame(header + body, dtype, seq)
                try:
                    conn.sendall(reply)
                except OSError:
                    return

    def _handle_frame(self, frame, dtype, seq):
        try:
            z, seq = decode_frame(frame)
        except tuple(_ERROR_CODES) as exc:
            return encode_error_frame(_ERROR_CODES[type(exc)], seq, str(exc))
        try:
            yhat = server_predict(self.model, z[None, :])[0]
            return encode_frame(yhat, seq, dtype)
        except Exception as exc:  # answer, do not crash the service
            return encode_error_frame(ERR_INTERNAL, seq, str(exc))

    def stop(self):
        self._stop.set()
        try:
            self._sock.close()
        except OSError:
            pass
        if self._accept_thread is not None:
            self._accept_thread.join(timeout=2.0)
        for worker in self._workers:
            worker.join(timeout=2.0)


def serve_decoder(model: CodesignModel, endpoint=("127.0.0.1", 0)) -> DecoderServer:
    """Bind and start a decoder service; returns the running handle."""
    host, port = endpoint
    return DecoderServer(model, host=host, port=port).start()


def read_reply(sock):
    """Read one reply frame; returns the prediction vector or raises RemoteFrameError."""
    header = _recv_exact(sock, HEADER_SIZE)
    if header is None:
        raise Truncated("connection closed while reading reply header")
    magic, _version, length_field, dtype_or_code, _seq = _HEADER.unpack_from(header, 0)
    if magic == ERROR_MAGIC:
        body = _recv_exact(sock, length_field + 4)
        if body is None:
            raise Truncated("connection closed while reading error frame")
        code, message, seq = decode_error_frame(header + body)
        raise RemoteFrameError(code, message, seq)
    body_len = length_field * _scalar_size(dtype_or_code) + 4
    body = _recv_exact(sock, body_len)
    if body is None:
        raise Truncated("connection closed while reading reply payload")
    z, _seq = decode_frame(header + body)
    return z


def request_prediction(sock, z, sequence_id, dtype=DTYPE_F64):
    sock.sendall(encode_frame(z, sequence_id, dtype))
    return read_reply(sock)


def send_dataset(model: CodesignModel, xs, address, dtype=DTYPE_F64):
    """Stream samples through encoder + wire; returns (predictions, report).

    *xs* rows are raw sensor inputs; the robot side (head layers if split,
    then encoder) runs locally and only the latent goes over the socket.
    """
    from .training import robot_encode

    xs = np.asarray(xs, dtype=np.float64)
    zs = robot_encode(model, xs)
    predictions = []
    with socket.create_connection(address) as sock:
        for i in range(zs.shape[0]):
            predictions.append(request_prediction(sock, zs[i], i, dtype))
    report = BandwidthReport(
        raw_bytes_per_sample=xs.shape[1] * 4,
        compressed_bytes_per_sample=frame_size(model.z_dim, dtype),
        samples_sent=zs.shape[0],
    )
    return np.array(predictions), report

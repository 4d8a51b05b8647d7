"""Single-round wire protocol between the image owner and the server.

One operation is exactly one exchange: the client opens a connection,
writes one request frame (operation id, JSON parameter block, encrypted
payload), reads one response frame, and the connection closes.  Nothing
is ever negotiated and the server keeps no state between requests, so
every protocol, histogram equalization included, costs a single round.

Frame layouts (all integers big-endian):

request   magic "CPX1" | u8 version | u16 op_id | u32 params_len |
          params (UTF-8 JSON) | u64 payload_len | payload
response  magic "CPX1" | u8 version | u16 status | u32 message_len |
          message (UTF-8) | u64 payload_len | payload
payload   u16 item_count | items: u8 kind | u64 length | bytes

The JSON parameter block always carries the public modulus as hex under
"n"; requests are self-contained.  Kernel weights and scalar amounts
travel as decimal strings so the format does not depend on any one
language's float formatting.
"""

from __future__ import annotations

import json
import random
import socket
import socketserver
import struct
import threading
from dataclasses import dataclass, field

from . import image as image_mod
from . import server_ops
from .encoding import (
    EncryptedNumber,
    deserialize_numbers,
    serialize_numbers,
)
from .errors import CryptoPixError, FormatError, KeyMismatchError, ProtocolError
from .image import EncryptedImage
from .paillier import PublicKey, RawCiphertext
from .server_ops import (
    GRADIENT_OPERATORS,
    Kernel,
    OP_BRIGHTNESS,
    OP_CONVOLVE,
    OP_EQUALIZE,
    OP_GRADIENT,
    OP_MORPH_SUM,
    OP_NEGATE,
    OP_SHARPEN,
    StructuringElement,
)

MAGIC = b"CPX1"
PROTOCOL_VERSION = 1

STATUS_OK = 0
STATUS_MALFORMED = 1
STATUS_BAD_VERSION = 2
STATUS_UNKNOWN_OP = 3
STATUS_BAD_PARAMS = 4
STATUS_KEY_MISMATCH = 5
STATUS_TOO_LARGE = 6
STATUS_INTERNAL = 7

STATUS_NAMES = {
    STATUS_OK: "ok",
    STATUS_MALFORMED: "malformed frame",
    STATUS_BAD_VERSION: "unsupported protocol version",
    STATUS_UNKNOWN_OP: "unknown operation",
    STATUS_BAD_PARAMS: "bad parameters",
    STATUS_KEY_MISMATCH: "key mismatch",
    STATUS_TOO_LARGE: "payload too large",
    STATUS_INTERNAL: "internal error",
}

KIND_IMAGE = 1
KIND_NUMBERS = 2

DEFAULT_MAX_PAYLOAD = 1 << 28
_MAX_PARAMS = 1 << 20


@dataclass
class Request:
    op_id: int
    params: dict
    payload: list[tuple[int, bytes]] = field(default_factory=list)


@dataclass
class Response:
    status: int
    message: str = ""
    payload: list[tuple[int, bytes]] = field(default_factory=list)


def _encode_payload(items) -> bytes:
    parts = [struct.pack(">H", len(items))]
    for kind, data in items:
        parts.append(struct.pack(">BQ", kind, len(data)))
        parts.append(data)
    return b"".join(parts)


def _decode_payload(data: bytes) -> list[tuple[int, bytes]]:
    if len(data) < 2:
        raise ProtocolError("truncated payload container", STATUS_MALFORMED)
    (count,) = struct.unpack_from(">H", data, 0)
    offset = 2
    items = []
    for _ in range(count):
        if offset + 9 > len(data):
            raise ProtocolError("truncated payload item header", STATUS_MALFORMED)
        kind, length = struct.unpack_from(">BQ", data, offset)
        offset += 9
        if offset + length > len(data):
            raise ProtocolError("truncated payload item body", STATUS_MALFORMED)
        items.append((kind, data[offset : offset + length]))
        offset += length
    if offset != len(data):
        raise ProtocolError("trailing bytes after payload items", STATUS_MALFORMED)
    return items


def encode_request(request: Request) -> bytes:
    params = json.dumps(request.params, sort_keys=True, separators=(",", ":")).encode()
    payload = _encode_payload(request.payload)
    return (
        MAGIC
        + struct.pack(">BHI", PROTOCOL_VERSION, request.op_id, len(params))
        + params
        + struct.pack(">Q", len(payload))
        + payload
    )


def decode_request(data: bytes, max_payload: int = DEFAULT_MAX_PAYLOAD) -> Request:
    if len(data) < 11 or data[:4] != MAGIC:
        raise ProtocolError("not a request frame", STATUS_MALFORMED)
    version, op_id, params_len = struct.unpack_from(">BHI", data, 4)
    if version != PROTOCOL_VERSION:
        raise ProtocolError(f"protocol version {version} not supported", STATUS_BAD_VERSION)
    if params_len > _MAX_PARAMS:
        raise ProtocolError("parameter block too large", STATUS_TOO_LARGE)
    offset = 11
    if offset + params_len + 8 > len(data):
        raise ProtocolError("truncated parameter block", STATUS_MALFORMED)
    try:
        params = json.loads(data[offset : offset + params_len].decode())
    except (UnicodeDecodeError, json.JSONDecodeError):
        raise ProtocolError("parameter block is not valid JSON", STATUS_MALFORMED)
    if not isinstance(params, dict):
        raise ProtocolError("parameter block must be a JSON object", STATUS_MALFORMED)
    offset += params_len
    (payload_len,) = struct.unpack_from(">Q", data, offset)
    if payload_len > max_payload:
        raise ProtocolError("payload exceeds the configured limit", STATUS_TOO_LARGE)
    offset += 8
    if offset + payload_len != len(data):
        raise ProtocolError("payload length does not match the frame", STATUS_MALFORMED)
    return Request(op_id, params, _decode_payload(data[offset:]))


def encode_response(response: Response) -> bytes:
    message = response.message.encode()
    payload = _encode_payload(response.payload)
    return (
        MAGIC
        + struct.pack(">BHI", PROTOCOL_VERSION, response.status, len(message))
        + message
        + struct.pack(">Q", len(payload))
        + payload
    )


def decode_response(data: bytes, max_payload: int = DEFAULT_MAX_PAYLOAD) -> Response:
    if len(data) < 11 or data[:4] != MAGIC:
        raise ProtocolError("not a response frame", STATUS_MALFORMED)
    version, status, message_len = struct.unpack_from(">BHI", data, 4)
    if version != PROTOCOL_VERSION:
        raise ProtocolError(f"protocol version {version} not supported", STATUS_BAD_VERSION)
    offset = 11
    if offset + message_len + 8 > len(data):
        raise ProtocolError("truncated response message", STATUS_MALFORMED)
    message = data[offset : offset + message_len].decode(errors="replace")
    offset += message_len
    (payload_len,) = struct.unpack_from(">Q", data, offset)
    if payload_len > max_payload:
        raise ProtocolError("payload exceeds the configured limit", STATUS_TOO_LARGE)
    offset += 8
    if offset + payload_len != len(data):
        raise ProtocolError("payload length does not match the frame", STATUS_MALFORMED)
    return Response(status, message, _decode_payload(data[offset:]))


# ---------------------------------------------------------------------------
# parameter block helpers
# ---------------------------------------------------------------------------


def kernel_to_params(kernel: Kernel) -> dict:
    return {
        "weights": [[repr(w) for w in row] for row in kernel.weights],
        "post_scale": repr(kernel.post_scale),
    }


def kernel_from_params(obj) -> Kernel:
    try:
        weights = [[float(w) for w in row] for row in obj["weights"]]
        post_scale = float(obj.get("post_scale", "1"))
        return Kernel.from_rows(weights, post_scale)
    except (TypeError, KeyError, ValueError, IndexError) as exc:
        raise ProtocolError(f"bad kernel: {exc}", STATUS_BAD_PARAMS)


def number_to_params(number: EncryptedNumber) -> dict:
    return {
        "exponent": number.exponent,
        "base": number.base,
        "ciphertext": format(number.ciphertext.value, "x"),
    }


def number_from_params(public_key: PublicKey, obj) -> EncryptedNumber:
    try:
        exponent = int(obj["exponent"])
        base = int(obj["base"])
        value = int(obj["ciphertext"], 16)
    except (TypeError, KeyError, ValueError):
        raise ProtocolError("bad encrypted value", STATUS_BAD_PARAMS)
    if not 0 < value < public_key.n_squared or base < 2:
        raise ProtocolError("bad encrypted value", STATUS_BAD_PARAMS)
    return EncryptedNumber(
        public_key, RawCiphertext(value, public_key.fingerprint), exponent, base
    )


# ---------------------------------------------------------------------------
# server side
# ---------------------------------------------------------------------------


class Dispatcher:
    """Decodes requests, runs the matching operation, encodes responses.

    Holds only public material; the operation table is read-only and a
    single dispatcher serves concurrent connections.
    """

    def __init__(self, rng: random.Random | None = None, max_payload: int = DEFAULT_MAX_PAYLOAD):
        self._rng = rng
        self.max_payload = max_payload

    def handle_bytes(self, data: bytes) -> bytes:
        try:
            request = decode_request(data, self.max_payload)
        except ProtocolError as exc:
            return encode_response(Response(exc.status or STATUS_MALFORMED, str(exc)))
        return encode_response(self.handle(request))

    def handle(self, request: Request) -> Response:
        try:
            return self._dispatch(request)
        except ProtocolError as exc:
            return Response(exc.status or STATUS_BAD_PARAMS, str(exc))
        except KeyMismatchError as exc:
            return Response(STATUS_KEY_MISMATCH, str(exc))
        except FormatError as exc:
            return Response(STATUS_MALFORMED, str(exc))
        except (ValueError, TypeError, KeyError) as exc:
            return Response(STATUS_BAD_PARAMS, str(exc))
        except CryptoPixError as exc:
            return Response(STATUS_INTERNAL, str(exc))

    def _public_key(self, request: Request) -> PublicKey:
        modulus = request.params.get("n")
        if not isinstance(modulus, str):
            raise ProtocolError("missing public modulus", STATUS_BAD_PARAMS)
        try:
            value = int(modulus, 16)
        except ValueError:
            raise ProtocolError("public modulus is not hex", STATUS_BAD_PARAMS)
        if value <= 3:
            raise ProtocolError("public modulus too small", STATUS_BAD_PARAMS)
        return PublicKey(value)

    def _payload_image(self, request: Request, public_key: PublicKey) -> EncryptedImage:
        for kind, data in request.payload:
            if kind == KIND_IMAGE:
                return image_mod.deserialize_image(public_key, data)
        raise ProtocolError("request carries no encrypted image", STATUS_BAD_PARAMS)

    def _payload_numbers(self, request: Request, public_key: PublicKey):
        for kind, data in request.payload:
            if kind == KIND_NUMBERS:
                return deserialize_numbers(public_key, data)
        raise ProtocolError("request carries no encrypted numbers", STATUS_BAD_PARAMS)

    def _dispatch(self, request: Request) -> Response:
        public_key = self._public_key(request)
        params = request.params
        if request.op_id == OP_NEGATE:
            result = server_ops.op_negate(
                public_key, self._payload_image(request, public_key), self._rng
            )
        elif request.op_id == OP_BRIGHTNESS:
            value = number_from_params(public_key, params.get("value"))
            result = server_ops.op_brightness(
                public_key, self._payload_image(request, public_key), value
            )
        elif request.op_id == OP_CONVOLVE:
            kernel = kernel_from_params(params.get("kernel"))
            result = server_ops.op_convolve(
                public_key, self._payload_image(request, public_key), kernel, self._rng
            )
        elif request.op_id == OP_GRADIENT:
            h1, h2 = self._gradient_kernels(params)
            gx, gy = server_ops.op_gradient(
                public_key, self._payload_image(request, public_key), h1, h2, self._rng
            )
            return Response(
                STATUS_OK,
                payload=[
                    (KIND_IMAGE, image_mod.serialize_image(gx)),
                    (KIND_IMAGE, image_mod.serialize_image(gy)),
                ],
            )
        elif request.op_id == OP_SHARPEN:
            try:
                amount = float(params.get("k"))
            except (TypeError, ValueError):
                raise ProtocolError("bad sharpening amount", STATUS_BAD_PARAMS)
            kernel = None
            if "kernel" in params:
                kernel = kernel_from_params(params["kernel"])
            result = server_ops.op_sharpen(
                public_key, self._payload_image(request, public_key), amount, kernel
            )
        elif request.op_id == OP_MORPH_SUM:
            try:
                element = StructuringElement.from_rows(params["mask"])
            except (TypeError, KeyError, ValueError) as exc:
                raise ProtocolError(f"bad structuring element: {exc}", STATUS_BAD_PARAMS)
            result = server_ops.op_morph_sum(
                public_key, self._payload_image(request, public_key), element, self._rng
            )
        elif request.op_id == OP_EQUALIZE:
            try:
                levels = int(params["levels"])
                width = int(params["width"])
                height = int(params["height"])
            except (TypeError, KeyError, ValueError):
                raise ProtocolError("bad equalization parameters", STATUS_BAD_PARAMS)
            histogram = self._payload_numbers(request, public_key)
            transform = server_ops.op_equalize_transform(
                public_key, histogram, levels, width, height
            )
            return Response(STATUS_OK, payload=[(KIND_NUMBERS, serialize_numbers(transform))])
        else:
            return Response(STATUS_UNKNOWN_OP, f"unknown operation id {request.op_id}")
        return Response(STATUS_OK, payload=[(KIND_IMAGE, image_mod.serialize_image(result))])

    def _gradient_kernels(self, params) -> tuple[Kernel, Kernel]:
        name = params.get("operator")
        if name is not None:
            try:
                return GRADIENT_OPERATORS[str(name).lower()]
            except KeyError:
                raise ProtocolError(f"unknown gradient operator {name!r}", STATUS_BAD_PARAMS)
        if "h1" in params and "h2" in params:
            return kernel_from_params(params["h1"]), kernel_from_params(params["h2"])
        raise ProtocolError("gradient needs an operator name or two kernels", STATUS_BAD_PARAMS)


# ---------------------------------------------------------------------------
# transports
# ---------------------------------------------------------------------------


class LoopbackTransport:
    """In-process transport: same frames, no sockets; for tests and CLI."""

    def __init__(self, dispatcher: Dispatcher):
        self.dispatcher = dispatcher
        self.round_trips = 0
        self.last_request_bytes = b""
        self.last_response_bytes = b""

    def request(self, request: Request) -> Response:
        self.round_trips += 1
        self.last_request_bytes = encode_request(request)
        self.last_response_bytes = self.dispatcher.handle_bytes(self.last_request_bytes)
        return decode_response(self.last_response_bytes)


def _recv_exact(connection: socket.socket, count: int) -> bytes:
    parts = []
    remaining = count
    while remaining:
        chunk = connection.recv(min(remaining, 1 << 16))
        if not chunk:
            raise ProtocolError("connection closed mid-frame", STATUS_MALFORMED)
        parts.append(chunk)
        remaining -= len(chunk)
    return b"".join(parts)


def _read_frame(connection: socket.socket, max_payload: int) -> bytes:
    """Read one request or response frame; both share the same skeleton."""
    head = _recv_exact(connection, 11)
    if head[:4] != MAGIC:
        raise ProtocolError("bad frame magic", STATUS_MALFORMED)
    (middle_len,) = struct.unpack_from(">I", head, 7)
    if middle_len > _MAX_PARAMS:
        raise ProtocolError("parameter block too large", STATUS_TOO_LARGE)
    middle = _recv_exact(connection, middle_len)
    length_bytes = _recv_exact(connection, 8)
    (payload_len,) = struct.unpack(">Q", length_bytes)
    if payload_len > max_payload:
        raise ProtocolError("payload exceeds the configured limit", STATUS_TOO_LARGE)
    payload = _recv_exact(connection, payload_len)
    return head + middle + length_bytes + payload


class RemoteTransport:
    """TCP transport: one connection per request, then the socket closes."""

    def __init__(self, host: str, port: int, timeout: float = 60.0, max_payload: int = DEFAULT_MAX_PAYLOAD):
        self.host = host
        self.port = port
        self.timeout = timeout
        self.max_payload = max_payload
        self.round_trips = 0
        self.last_request_bytes = b""
        self.last_response_bytes = b""

    def request(self, request: Request) -> Response:
        self.round_trips += 1
        self.last_request_bytes = encode_request(request)
        with socket.create_connection((self.host, self.port), self.timeout) as connection:
            connection.sendall(self.last_request_bytes)
            connection.shutdown(socket.SHUT_WR)
            self.last_response_bytes = _read_frame(connection, self.max_payload)
        return decode_response(self.last_response_bytes, self.max_payload)


class _Handler(socketserver.BaseRequestHandler):
    def handle(self):
        server: "OpServer" = self.server.op_server
        server.note_connection()
        try:
            frame = _read_frame(self.request, server.dispatcher.max_payload)
        except ProtocolError as exc:
            response = Response(exc.status or STATUS_MALFORMED, str(exc))
            self._send(encode_response(response))
            return
        except OSError:
            return
        self._send(server.dispatcher.handle_bytes(frame))

    def _send(self, data: bytes):
        try:
            self.request.sendall(data)
        except OSError:
            pass


class _ThreadingServer(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True


class OpServer:
    """TCP server: one request and one response per connection."""

    def __init__(self, dispatcher: Dispatcher, host: str = "127.0.0.1", port: int = 0):
        self.dispatcher = dispatcher
        self._server = _ThreadingServer((host, port), _Handler)
        self._server.op_server = self
        self._thread = None
        self._lock = threading.Lock()
        self.connections_served = 0

    @property
    def address(self) -> tuple[str, int]:
        host, port = self._server.server_address[:2]
        return host, port

    def note_connection(self):
        with self._lock:
            self.connections_served += 1

    def start(self) -> tuple[str, int]:
        """Serve in a background thread; returns the bound address."""
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)
        self._thread.start()
        return self.address

    def serve_forever(self):
        self._server.serve_forever()

    def close(self):
        self._server.shutdown()
        self._server.server_close()
        if self._thread is not None:
            self._thread.join(timeout=5)

    def __enter__(self):
        self.start()
        return self

    def __exit__(self, *exc_info):
        self.close()


# ---------------------------------------------------------------------------
# client side
# ---------------------------------------------------------------------------


def parse_endpoint(text: str) -> tuple[str, int]:
    host, sep, port = text.rpartition(":")
    if not sep or not host:
        raise ValueError(f"endpoint {text!r} is not host:port")
    return host, int(port)


class OpClient:
    """High-level client: one method per operation, one round per call."""

    def __init__(self, transport, public_key: PublicKey):
        self.transport = transport
        self.public_key = public_key

    @property
    def round_trips(self) -> int:
        return self.transport.round_trips

    def _params(self, extra: dict | None = None) -> dict:
        params = {"n": format(self.public_key.n, "x")}
        if extra:
            params.update(extra)
        return params

    def _call(self, op_id: int, params: dict, payload) -> Response:
        response = self.transport.request(Request(op_id, params, payload))
        if response.status != STATUS_OK:
            name = STATUS_NAMES.get(response.status, str(response.status))
            raise ProtocolError(
                f"server rejected the request ({name}): {response.message}", response.status
            )
        return response

    def _image_payload(self, image: EncryptedImage):
        return [(KIND_IMAGE, image_mod.serialize_image(image))]

    def _response_images(self, response: Response, count: int) -> list[EncryptedImage]:
        images = [
            image_mod.deserialize_image(self.public_key, data)
            for kind, data in response.payload
            if kind == KIND_IMAGE
        ]
        if len(images) != count:
            raise ProtocolError(
                f"expected {count} image(s) in the response, got {len(images)}",
                STATUS_MALFORMED,
            )
        return images

    def negate(self, image: EncryptedImage) -> EncryptedImage:
        response = self._call(OP_NEGATE, self._params(), self._image_payload(image))
        return self._response_images(response, 1)[0]

    def brightness(self, image: EncryptedImage, value: EncryptedNumber) -> EncryptedImage:
        params = self._params({"value": number_to_params(value)})
        response = self._call(OP_BRIGHTNESS, params, self._image_payload(image))
        return self._response_images(response, 1)[0]

    def convolve(self, image: EncryptedImage, kernel: Kernel) -> EncryptedImage:
        params = self._params({"kernel": kernel_to_params(kernel)})
        response = self._call(OP_CONVOLVE, params, self._image_payload(image))
        return self._response_images(response, 1)[0]

    def gradient(
        self,
        image: EncryptedImage,
        operator: str | None = "sobel",
        kernels: tuple[Kernel, Kernel] | None = None,
    ) -> tuple[EncryptedImage, EncryptedImage]:
        if kernels is not None:
            extra = {
                "h1": kernel_to_params(kernels[0]),
                "h2": kernel_to_params(kernels[1]),
            }
        else:
            extra = {"operator": operator}
        response = self._call(OP_GRADIENT, self._params(extra), self._image_payload(image))
        gx, gy = self._response_images(response, 2)
        return gx, gy

    def sharpen(
        self, image: EncryptedImage, k: float, kernel: Kernel | None = None
    ) -> EncryptedImage:
        extra = {"k": repr(float(k))}
        if kernel is not None:
            extra["kernel"] = kernel_to_params(kernel)
        response = self._call(OP_SHARPEN, self._params(extra), self._image_payload(image))
        return self._response_images(response, 1)[0]

    def morph_sum(self, image: EncryptedImage, element: StructuringElement) -> EncryptedImage:
        params = self._params({"mask": [list(row) for row in element.mask]})
        response = self._call(OP_MORPH_SUM, params, self._image_payload(image))
        return self._response_images(response, 1)[0]

    def equalize_transform(
        self, histogram: list[EncryptedNumber], levels: int, width: int, height: int
    ) -> list[EncryptedNumber]:
        params = self._params({"levels": levels, "width": width, "height": height})
        payload = [(KIND_NUMBERS, serialize_numbers(histogram))]
        response = self._call(OP_EQUALIZE, params, payload)
        for kind, data in response.payload:
            if kind == KIND_NUMBERS:
                return deserialize_numbers(self.public_key, data)
        raise ProtocolError("response carries no encrypted numbers", STATUS_MALFORMED)

"""Tests for the single-round wire protocol, dispatcher, and transports."""

import random
import socket
import struct
import threading

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cryptopix.encoding import decrypt_value, encrypt_value
from cryptopix.errors import ProtocolError
from cryptopix.image import PlainImage, decrypt_image, encrypt_image, serialize_image
from cryptopix.postprocess import encrypt_histogram
from cryptopix.server_ops import (
    Kernel,
    OP_BRIGHTNESS,
    OP_EQUALIZE,
    OP_GRADIENT,
    OP_MORPH_SUM,
    OP_NEGATE,
    OP_SHARPEN,
    StructuringElement,
    op_equalize_transform,
    op_negate,
)
from cryptopix.transport import (
    KIND_IMAGE,
    KIND_NUMBERS,
    MAGIC,
    STATUS_BAD_PARAMS,
    STATUS_BAD_VERSION,
    STATUS_KEY_MISMATCH,
    STATUS_MALFORMED,
    STATUS_OK,
    STATUS_TOO_LARGE,
    STATUS_UNKNOWN_OP,
    Dispatcher,
    LoopbackTransport,
    OpClient,
    OpServer,
    RemoteTransport,
    Request,
    Response,
    decode_request,
    decode_response,
    encode_request,
    encode_response,
    kernel_from_params,
    kernel_to_params,
    number_from_params,
    number_to_params,
    parse_endpoint,
)


@pytest.fixture(scope="module")
def rng():
    return random.Random(616)


@pytest.fixture(scope="module")
def plain_4x4(rng):
    return PlainImage(4, 4, [rng.randrange(256) for _ in range(16)])


@pytest.fixture(scope="module")
def encrypted_4x4(key_256, plain_4x4, rng):
    return encrypt_image(key_256.public, plain_4x4, rng=rng)


@pytest.fixture(scope="module")
def binary_4x4(key_256, rng):
    plain = PlainImage(4, 4, [rng.randrange(2) for _ in range(16)], levels=2)
    return plain, encrypt_image(key_256.public, plain, rng=rng)


def make_client(key, seed=0):
    transport = LoopbackTransport(Dispatcher(random.Random(seed)))
    return OpClient(transport, key.public), transport


class TestFrameCodec:
    def test_request_round_trip(self):
        request = Request(
            OP_MORPH_SUM,
            {"n": "abc123", "mask": [[1, 1, 1]]},
            [(KIND_IMAGE, b"jam"), (KIND_NUMBERS, b"")],
        )
        decoded = decode_request(encode_request(request))
        assert decoded.op_id == request.op_id
        assert decoded.params == request.params
        assert decoded.payload == request.payload

    def test_response_round_trip(self):
        response = Response(STATUS_OK, "tout va bien", [(KIND_NUMBERS, b"\x00" * 9)])
        decoded = decode_response(encode_response(response))
        assert decoded.status == response.status
        assert decoded.message == response.message
        assert decoded.payload == response.payload

    @settings(deadline=None, max_examples=60)
    @given(
        op_id=st.integers(0, 65535),
        params=st.dictionaries(
            st.text(max_size=8), st.one_of(st.integers(), st.text(max_size=8)), max_size=4
        ),
        payload=st.lists(
            st.tuples(st.integers(0, 255), st.binary(max_size=48)), max_size=4
        ),
    )
    def test_fuzzed_round_trips(self, op_id, params, payload):
        request = Request(op_id, params, payload)
        decoded = decode_request(encode_request(request))
        assert (decoded.op_id, decoded.params, decoded.payload) == (op_id, params, payload)

    def test_wrong_version(self):
        data = bytearray(encode_request(Request(OP_NEGATE, {})))
        data[4] = 9
        with pytest.raises(ProtocolError) as info:
            decode_request(bytes(data))
        assert info.value.status == STATUS_BAD_VERSION

    def test_bad_magic(self):
        data = b"HTTP" + encode_request(Request(OP_NEGATE, {}))[4:]
        with pytest.raises(ProtocolError) as info:
            decode_request(data)
        assert info.value.status == STATUS_MALFORMED

    @pytest.mark.parametrize("cut", [1, 6, 12, -1])
    def test_truncation(self, cut):
        data = encode_request(Request(OP_NEGATE, {"n": "ff"}, [(1, b"payload")]))
        with pytest.raises(ProtocolError):
            decode_request(data[:cut])

    def test_trailing_bytes(self):
        data = encode_request(Request(OP_NEGATE, {})) + b"\x00"
        with pytest.raises(ProtocolError) as info:
            decode_request(data)
        assert info.value.status == STATUS_MALFORMED

    def _raw_request(self, params_bytes: bytes) -> bytes:
        payload = struct.pack(">H", 0)
        return (
            MAGIC
            + struct.pack(">BHI", 1, OP_NEGATE, len(params_bytes))
            + params_bytes
            + struct.pack(">Q", len(payload))
            + payload
        )

    def test_params_must_be_json(self):
        with pytest.raises(ProtocolError) as info:
            decode_request(self._raw_request(b"{not json"))
        assert info.value.status == STATUS_MALFORMED

    def test_params_must_be_an_object(self):
        with pytest.raises(ProtocolError) as info:
            decode_request(self._raw_request(b"[1,2]"))
        assert info.value.status == STATUS_MALFORMED

    def test_payload_size_limit(self):
        data = encode_request(Request(OP_NEGATE, {}, [(1, b"x" * 100)]))
        with pytest.raises(ProtocolError) as info:
            decode_request(data, max_payload=16)
        assert info.value.status == STATUS_TOO_LARGE

    def test_params_size_limit(self):
        head = MAGIC + struct.pack(">BHI", 1, OP_NEGATE, 1 << 21)
        with pytest.raises(ProtocolError) as info:
            decode_request(head + b"x" * 32)
        assert info.value.status == STATUS_TOO_LARGE

    def test_payload_container_trailing_bytes(self):
        inner = struct.pack(">H", 0) + b"extra"
        data = (
            MAGIC
            + struct.pack(">BHI", 1, OP_NEGATE, 2)
            + b"{}"
            + struct.pack(">Q", len(inner))
            + inner
        )
        with pytest.raises(ProtocolError) as info:
            decode_request(data)
        assert info.value.status == STATUS_MALFORMED


class TestParamHelpers:
    def test_kernel_round_trip(self):
        kernel = Kernel.averaging(3)
        restored = kernel_from_params(kernel_to_params(kernel))
        assert restored == kernel

    def test_kernel_repr_strings_survive_floats(self):
        kernel = Kernel.from_rows([[0.1, -2.5, 1 / 3]], post_scale=1 / 7)
        restored = kernel_from_params(kernel_to_params(kernel))
        assert restored.weights == kernel.weights
        assert restored.post_scale == kernel.post_scale

    @pytest.mark.parametrize(
        "obj",
        [
            None,
            {},
            {"weights": [["1", "2"]]},
            {"weights": [["one", "two", "three"]]},
            {"weights": "nonsense"},
        ],
    )
    def test_bad_kernels(self, obj):
        with pytest.raises(ProtocolError) as info:
            kernel_from_params(obj)
        assert info.value.status == STATUS_BAD_PARAMS

    def test_number_round_trip(self, key_256):
        number = encrypt_value(key_256.public, -3.75, rng=random.Random(2))
        restored = number_from_params(key_256.public, number_to_params(number))
        assert restored.ciphertext.value == number.ciphertext.value
        assert restored.exponent == number.exponent
        assert restored.base == number.base
        assert decrypt_value(key_256.private, restored) == -3.75

    @pytest.mark.parametrize(
        "mutate",
        [
            lambda obj, n: obj.pop("ciphertext"),
            lambda obj, n: obj.update(ciphertext="0"),
            lambda obj, n: obj.update(ciphertext=format(n * n, "x")),
            lambda obj, n: obj.update(ciphertext="zz"),
            lambda obj, n: obj.update(base=1),
            lambda obj, n: obj.update(exponent="deep"),
        ],
    )
    def test_bad_numbers(self, key_256, mutate):
        number = encrypt_value(key_256.public, 5, rng=random.Random(3))
        obj = number_to_params(number)
        mutate(obj, key_256.public.n)
        with pytest.raises(ProtocolError) as info:
            number_from_params(key_256.public, obj)
        assert info.value.status == STATUS_BAD_PARAMS


class TestDispatcher:
    def dispatch(self, request, seed=1):
        return Dispatcher(random.Random(seed)).handle(request)

    def image_request(self, op_id, key, encrypted, extra=None):
        params = {"n": format(key.public.n, "x")}
        if extra:
            params.update(extra)
        return Request(op_id, params, [(KIND_IMAGE, serialize_image(encrypted))])

    def test_negate_end_to_end(self, key_256, plain_4x4, encrypted_4x4):
        from cryptopix.image import deserialize_image

        response = self.dispatch(self.image_request(OP_NEGATE, key_256, encrypted_4x4))
        assert response.status == STATUS_OK
        result = deserialize_image(key_256.public, response.payload[0][1])
        expected = [255 - value for value in plain_4x4.pixels]
        assert decrypt_image(key_256.private, result).pixels == expected

    def test_unknown_op(self, key_256):
        response = self.dispatch(Request(99, {"n": format(key_256.public.n, "x")}))
        assert response.status == STATUS_UNKNOWN_OP

    @pytest.mark.parametrize("params", [{}, {"n": 5}, {"n": "xyz"}, {"n": "3"}])
    def test_bad_modulus(self, params):
        response = self.dispatch(Request(OP_NEGATE, params))
        assert response.status == STATUS_BAD_PARAMS

    def test_missing_image_payload(self, key_256):
        response = self.dispatch(Request(OP_NEGATE, {"n": format(key_256.public.n, "x")}))
        assert response.status == STATUS_BAD_PARAMS

    def test_brightness_needs_a_value(self, key_256, encrypted_4x4):
        response = self.dispatch(self.image_request(OP_BRIGHTNESS, key_256, encrypted_4x4))
        assert response.status == STATUS_BAD_PARAMS

    def test_sharpen_needs_a_valid_amount(self, key_256, encrypted_4x4):
        request = self.image_request(OP_SHARPEN, key_256, encrypted_4x4, {"k": "soft"})
        assert self.dispatch(request).status == STATUS_BAD_PARAMS
        request = self.image_request(OP_SHARPEN, key_256, encrypted_4x4, {"k": "-1.0"})
        assert self.dispatch(request).status == STATUS_BAD_PARAMS

    def test_gradient_parameter_errors(self, key_256, encrypted_4x4):
        request = self.image_request(OP_GRADIENT, key_256, encrypted_4x4)
        assert self.dispatch(request).status == STATUS_BAD_PARAMS
        request = self.image_request(
            OP_GRADIENT, key_256, encrypted_4x4, {"operator": "scharr"}
        )
        assert self.dispatch(request).status == STATUS_BAD_PARAMS

    def test_morph_parameter_errors(self, key_256, binary_4x4, encrypted_4x4):
        _, encrypted_binary = binary_4x4
        request = self.image_request(
            OP_MORPH_SUM, key_256, encrypted_binary, {"mask": [[1, 2, 1]]}
        )
        assert self.dispatch(request).status == STATUS_BAD_PARAMS
        # grayscale input is a parameter-level mistake, not a crash
        request = self.image_request(
            OP_MORPH_SUM, key_256, encrypted_4x4, {"mask": [[1, 1, 1]]}
        )
        assert self.dispatch(request).status == STATUS_BAD_PARAMS

    def test_equalize_parameter_errors(self, key_256):
        params = {"n": format(key_256.public.n, "x"), "levels": 4, "width": 4}
        response = self.dispatch(Request(OP_EQUALIZE, params))
        assert response.status == STATUS_BAD_PARAMS

    def test_key_mismatch_is_reported(self, key_256, key_512, encrypted_4x4):
        request = self.image_request(OP_NEGATE, key_512, encrypted_4x4)
        assert self.dispatch(request).status == STATUS_KEY_MISMATCH

    def test_garbage_bytes_get_a_malformed_response(self):
        answer = Dispatcher().handle_bytes(b"not a frame at all")
        assert decode_response(answer).status == STATUS_MALFORMED

    def test_version_rejection_via_bytes(self, key_256, encrypted_4x4):
        data = bytearray(encode_request(self.image_request(OP_NEGATE, key_256, encrypted_4x4)))
        data[4] = 2
        answer = Dispatcher().handle_bytes(bytes(data))
        assert decode_response(answer).status == STATUS_BAD_VERSION

    def test_payload_limit(self, key_256, encrypted_4x4):
        dispatcher = Dispatcher(max_payload=64)
        frame = encode_request(self.image_request(OP_NEGATE, key_256, encrypted_4x4))
        assert decode_response(dispatcher.handle_bytes(frame)).status == STATUS_TOO_LARGE


class TestLoopbackClient:
    def test_negate_in_one_round(self, key_256, plain_4x4, encrypted_4x4):
        client, transport = make_client(key_256)
        result = client.negate(encrypted_4x4)
        assert transport.round_trips == 1
        expected = [255 - value for value in plain_4x4.pixels]
        assert decrypt_image(key_256.private, result).pixels == expected

    def test_brightness_in_one_round(self, key_256, plain_4x4, encrypted_4x4):
        client, transport = make_client(key_256)
        value = encrypt_value(key_256.public, 30, rng=random.Random(4))
        result = client.brightness(encrypted_4x4, value)
        assert transport.round_trips == 1
        expected = [pixel + 30 for pixel in plain_4x4.pixels]
        assert decrypt_image(
            key_256.private, result, clamp=True
        ).pixels == [min(255, v) for v in expected]

    def test_convolve_in_one_round(self, key_256, plain_4x4, encrypted_4x4):
        client, transport = make_client(key_256)
        result = client.convolve(encrypted_4x4, Kernel.identity(3))
        assert transport.round_trips == 1
        assert decrypt_image(key_256.private, result) == plain_4x4

    def test_gradient_in_one_round(self, key_256, encrypted_4x4):
        client, transport = make_client(key_256)
        gx, gy = client.gradient(encrypted_4x4, operator="prewitt")
        assert transport.round_trips == 1
        assert gx.width == gy.width == 4

    def test_gradient_with_custom_kernels(self, key_256, encrypted_4x4):
        client, transport = make_client(key_256)
        pair = (Kernel.identity(3), Kernel.identity(3))
        gx, gy = client.gradient(encrypted_4x4, kernels=pair)
        assert transport.round_trips == 1
        assert decrypt_image(key_256.private, gx) == decrypt_image(key_256.private, gy)

    def test_sharpen_in_one_round(self, key_256, encrypted_4x4):
        client, transport = make_client(key_256)
        result = client.sharpen(encrypted_4x4, 1.0)
        assert transport.round_trips == 1
        assert result.width == 4

    def test_morph_sum_in_one_round(self, key_256, binary_4x4):
        plain, encrypted = binary_4x4
        client, transport = make_client(key_256)
        result = client.morph_sum(encrypted, StructuringElement.full(3))
        assert transport.round_trips == 1
        assert result.levels == 10

    def test_equalize_in_one_round(self, key_256, plain_4x4):
        rng = random.Random(5)
        histogram = encrypt_histogram(key_256.public, plain_4x4, rng=rng)
        client, transport = make_client(key_256)
        transform = client.equalize_transform(histogram, 256, 4, 4)
        assert transport.round_trips == 1
        direct = op_equalize_transform(key_256.public, histogram, 256, 4, 4)
        assert [t.ciphertext.value for t in transform] == [
            t.ciphertext.value for t in direct
        ]

    def test_server_rejection_raises(self, key_256, encrypted_4x4):
        client, _ = make_client(key_256)
        with pytest.raises(ProtocolError) as info:
            client.morph_sum(encrypted_4x4, StructuringElement.full(3))
        assert info.value.status == STATUS_BAD_PARAMS

    def test_frames_are_recorded(self, key_256, encrypted_4x4):
        client, transport = make_client(key_256)
        client.negate(encrypted_4x4)
        assert transport.last_request_bytes[:4] == MAGIC
        assert decode_response(transport.last_response_bytes).status == STATUS_OK


class TestEndpoints:
    def test_host_and_port(self):
        assert parse_endpoint("localhost:9000") == ("localhost", 9000)
        assert parse_endpoint("10.0.0.2:31") == ("10.0.0.2", 31)

    @pytest.mark.parametrize("text", ["noport", ":123", "host:"])
    def test_bad_endpoints(self, text):
        with pytest.raises(ValueError):
            parse_endpoint(text)


class TestTcpServer:
    def test_remote_matches_loopback_bit_for_bit(self, key_256, encrypted_4x4):
        loop_client, loop_transport = make_client(key_256, seed=77)
        loop_result = loop_client.negate(encrypted_4x4)
        with OpServer(Dispatcher(random.Random(77))) as server:
            host, port = server.address
            remote = RemoteTransport(host, port)
            remote_client = OpClient(remote, key_256.public)
            remote_result = remote_client.negate(encrypted_4x4)
            assert server.connections_served == 1
        assert remote.last_response_bytes == loop_transport.last_response_bytes
        assert [p.ciphertext.value for p in remote_result.pixels] == [
            p.ciphertext.value for p in loop_result.pixels
        ]

    def test_connection_counting(self, key_256, encrypted_4x4):
        with OpServer(Dispatcher(random.Random(1))) as server:
            host, port = server.address
            client = OpClient(RemoteTransport(host, port), key_256.public)
            client.negate(encrypted_4x4)
            client.negate(encrypted_4x4)
            assert server.connections_served == 2
            assert client.round_trips == 2

    def test_concurrent_requests(self, key_256, encrypted_4x4):
        results = {}
        with OpServer(Dispatcher()) as server:
            host, port = server.address

            def work(tag):
                client = OpClient(RemoteTransport(host, port), key_256.public)
                results[tag] = client.negate(encrypted_4x4)

            threads = [threading.Thread(target=work, args=(i,)) for i in range(2)]
            for thread in threads:
                thread.start()
            for thread in threads:
                thread.join()
            assert server.connections_served == 2
        for result in results.values():
            assert result.width == 4

    def test_garbage_connection_gets_an_error_response(self):
        with OpServer(Dispatcher()) as server:
            host, port = server.address
            with socket.create_connection((host, port), timeout=10) as raw:
                raw.sendall(b"GET / HTTP/1.1\r\n\r\n")
                raw.shutdown(socket.SHUT_WR)
                answer = b""
                while True:
                    chunk = raw.recv(4096)
                    if not chunk:
                        break
                    answer += chunk
        assert decode_response(answer).status == STATUS_MALFORMED

    def test_remote_server_rejections_surface(self, key_256, encrypted_4x4):
        with OpServer(Dispatcher()) as server:
            host, port = server.address
            client = OpClient(RemoteTransport(host, port), key_256.public)
            with pytest.raises(ProtocolError) as info:
                client.morph_sum(encrypted_4x4, StructuringElement.full(3))
            assert info.value.status == STATUS_BAD_PARAMS

"""End-to-end acceptance checks for the whole pipeline.

Each test exercises one system-level guarantee and reports an
``ACCEPTANCE n ... PASS`` or ``FAIL`` line directly on the terminal,
bypassing output capture, so a plain pytest run shows the verdicts.
"""

import math
import random
import time
from contextlib import contextmanager
from fractions import Fraction

import numpy as np
import pytest

from cryptopix import paillier
from cryptopix.bench import bench_crypto, bench_ops
from cryptopix.cli import EXIT_OK, main
from cryptopix.data import load_sample
from cryptopix.encoding import (
    decrypt_exact,
    decrypt_value,
    encrypt_value,
)
from cryptopix.image import (
    PlainImage,
    ciphertext_bits,
    decrypt_image,
    decrypt_image_values,
    encrypt_image,
    expansion_factor,
    save_image,
)
from cryptopix.postprocess import (
    encrypt_histogram,
    finish_equalization,
    finish_gradient,
    finish_morphology,
)
from cryptopix.reference import (
    compare,
    ref_brightness,
    ref_convolve_values,
    ref_dilate,
    ref_equalize,
    ref_erode,
    ref_gradient,
    ref_negate,
    ref_sharpen_values,
)
from cryptopix.server_ops import (
    GRADIENT_OPERATORS,
    Kernel,
    StructuringElement,
    op_brightness,
    op_convolve,
    op_equalize_transform,
    op_gradient,
    op_morph_sum,
    op_negate,
    op_sharpen,
)
from cryptopix.transport import (
    MAGIC,
    Dispatcher,
    LoopbackTransport,
    OpClient,
    OpServer,
    RemoteTransport,
)


@pytest.fixture
def announce(capsys):
    """Print a line on the real terminal even while capture is active."""

    def emit(line):
        with capsys.disabled():
            print(line)

    return emit


@contextmanager
def criterion(announce, number, label):
    try:
        yield
    except BaseException:
        announce(f"ACCEPTANCE {number} ({label}): FAIL")
        raise
    announce(f"ACCEPTANCE {number} ({label}): PASS")


def test_criterion_1_encrypted_equals_plain(
    key_512, gray_samples, binary_samples, announce
):
    """Every supported operation agrees exactly with its plain version.

    Negation, brightness shifts of +-50, both gradient component pairs,
    equalization, erosion, and dilation run over 512-bit ciphertexts on
    all bundled 64x64 samples and must reproduce the plain-domain result
    pixel for pixel, within a five minute budget.
    """
    with criterion(announce, 1, "encrypted results equal plain results exactly"):
        start = time.monotonic()
        public, private = key_512
        rng = random.Random(101)
        for image in gray_samples.values():
            encrypted = encrypt_image(public, image, rng=rng, workers=4)

            negated = decrypt_image(private, op_negate(public, encrypted, rng))
            assert negated == ref_negate(image)

            for shift in (50, -50):
                value = encrypt_value(public, shift, rng=rng)
                brightened = decrypt_image(
                    private, op_brightness(public, encrypted, value), clamp=True
                )
                assert brightened == ref_brightness(image, shift)

            for operator in ("sobel", "prewitt"):
                h1, h2 = GRADIENT_OPERATORS[operator]
                gx_enc, gy_enc = op_gradient(public, encrypted, h1, h2, rng)
                gx = decrypt_image_values(private, gx_enc, workers=4)
                gy = decrypt_image_values(private, gy_enc, workers=4)
                want_gx, want_gy = ref_gradient(image, h1, h2)
                assert np.array_equal(gx, want_gx)
                assert np.array_equal(gy, want_gy)

            histogram = encrypt_histogram(public, image, rng=rng)
            transform = op_equalize_transform(
                public, histogram, image.levels, image.width, image.height
            )
            values = [decrypt_value(private, entry) for entry in transform]
            assert finish_equalization(image, values) == ref_equalize(image)

        element = StructuringElement.full(3)
        for image in binary_samples.values():
            encrypted = encrypt_image(public, image, rng=rng, workers=4)

            negated = decrypt_image(private, op_negate(public, encrypted, rng))
            assert negated == ref_negate(image)

            counts = decrypt_image(
                private, op_morph_sum(public, encrypted, element, rng)
            )
            assert finish_morphology(counts, element, "erosion") == ref_erode(
                image, element
            )
            assert finish_morphology(counts, element, "dilation") == ref_dilate(
                image, element
            )

        elapsed = time.monotonic() - start
        assert elapsed < 300.0, f"agreement sweep took {elapsed:.1f}s, budget is 300s"


def test_criterion_2_precision_controls_error(key_512, gray_samples, announce):
    """Filtering error is small at fine precision and grows when coarse.

    A 3x3 average and an unsharp mask with amount 1 must stay within a
    mean absolute error of 0.5 gray levels at the 1e-8 working
    precision, and every non-constant sample must show strictly more
    error at 1e-2.
    """
    with criterion(announce, 2, "fine precision beats coarse on filtering error"):
        public, private = key_512
        rng = random.Random(202)
        kernel = Kernel.averaging(3)
        for image in gray_samples.values():
            raster = image.to_array()
            assert raster.min() != raster.max(), "sample must not be constant"
            lpf_want = ref_convolve_values(image, kernel)
            sharp_want = ref_sharpen_values(image, 1.0)

            errors = {}
            for precision in (1e-8, 1e-2):
                encrypted = encrypt_image(public, image, precision=precision, rng=rng)
                lpf = decrypt_image_values(
                    private, op_convolve(public, encrypted, kernel, rng)
                )
                sharp = decrypt_image_values(
                    private, op_sharpen(public, encrypted, 1.0)
                )
                errors[precision] = (
                    compare(lpf, lpf_want).mean_abs_error,
                    compare(sharp, sharp_want).mean_abs_error,
                )

            fine_lpf, fine_sharp = errors[1e-8]
            coarse_lpf, coarse_sharp = errors[1e-2]
            assert fine_lpf <= 0.5
            assert fine_sharp <= 0.5
            assert coarse_lpf > fine_lpf
            assert coarse_sharp > fine_sharp


def test_criterion_3_homomorphic_laws(key_256, announce):
    """Randomized checks of the two ciphertext identities, errors all zero.

    A thousand trials each: products of ciphertexts decrypt to sums of
    plaintexts, ciphertext powers decrypt to scaled plaintexts, and the
    signed fold round-trips negative values, all with exact equality at
    256 bits inside a one minute budget.
    """
    with criterion(announce, 3, "randomized additive and scaling identities"):
        start = time.monotonic()
        public, private = key_256
        rng = random.Random(303)
        n = public.n
        trials = 1000

        for _ in range(trials):
            m1 = rng.randrange(n)
            m2 = rng.randrange(n)
            total = paillier.add_cipher(
                public,
                paillier.encrypt_raw(public, m1, rng),
                paillier.encrypt_raw(public, m2, rng),
            )
            assert paillier.decrypt_raw(private, total) == (m1 + m2) % n

        for trial in range(trials):
            m = rng.randrange(n)
            if trial % 3 == 0:
                d = rng.randrange(1, 1 << 16)
            elif trial % 3 == 1:
                d = rng.randrange(1 << 32, 1 << 64)
            else:
                d = n - rng.randrange(1, 1 << 16)  # the negative fold
            scaled = paillier.scalar_mul(
                public, paillier.encrypt_raw(public, m, rng), d
            )
            assert paillier.decrypt_raw(private, scaled) == m * d % n

        for _ in range(trials):
            a = rng.randint(-(1 << 40), 1 << 40)
            b = rng.randint(-(1 << 40), 1 << 40)
            d = rng.randint(-(1 << 10), 1 << 10)
            enc_a = encrypt_value(public, a, rng=rng)
            enc_b = encrypt_value(public, b, rng=rng)
            assert decrypt_exact(private, enc_a + enc_b) == Fraction(a + b)
            assert decrypt_exact(private, enc_a * d) == Fraction(a * d)

        elapsed = time.monotonic() - start
        assert elapsed < 60.0, f"law checks took {elapsed:.1f}s, budget is 60s"


def test_criterion_4_ciphertext_expansion(
    key_256, key_512, key_1024, ramp, announce
):
    """Encrypted 64x64 images weigh about 2k bits per pixel at k-bit keys."""
    with criterion(announce, 4, "ciphertext expansion tracks twice the key size"):
        rng = random.Random(404)
        pixels = ramp.width * ramp.height
        for bits, keypair in ((256, key_256), (512, key_512), (1024, key_1024)):
            encrypted = encrypt_image(keypair.public, ramp, rng=rng, workers=4)
            expected = 2 * bits * pixels
            actual = ciphertext_bits(encrypted)
            assert abs(actual - expected) <= 0.10 * expected, (
                f"{bits}-bit image is {actual} ciphertext bits, expected ~{expected}"
            )
            assert expansion_factor(encrypted) == pytest.approx(
                2 * bits / 8, rel=0.10
            )


def test_criterion_5_single_round_per_op(key_256, announce):
    """Every operation costs exactly one request/response round.

    Verified twice: on the in-process transport via its round counter
    and captured frames, and over a real TCP server where each call must
    consume exactly one connection.
    """
    with criterion(announce, 5, "one communication round per operation"):
        public, private = key_256
        rng = random.Random(505)
        image = PlainImage(8, 8, [rng.randrange(256) for _ in range(64)])
        binary = PlainImage(8, 8, [rng.randrange(2) for _ in range(64)], levels=2)
        encrypted = encrypt_image(public, image, rng=rng)
        encrypted_binary = encrypt_image(public, binary, rng=rng)
        histogram = encrypt_histogram(public, image, rng=rng)
        shift = encrypt_value(public, 25, rng=rng)

        calls = [
            ("negation", lambda c: c.negate(encrypted)),
            ("brightness", lambda c: c.brightness(encrypted, shift)),
            ("lowpass", lambda c: c.convolve(encrypted, Kernel.averaging(3))),
            ("sharpen", lambda c: c.sharpen(encrypted, 1.0)),
            ("gradient", lambda c: c.gradient(encrypted, "sobel")),
            (
                "morphology",
                lambda c: c.morph_sum(encrypted_binary, StructuringElement.full(3)),
            ),
            (
                "equalization",
                lambda c: c.equalize_transform(histogram, image.levels, 8, 8),
            ),
        ]

        transport = LoopbackTransport(Dispatcher(random.Random(1)))
        client = OpClient(transport, public)
        for name, call in calls:
            before = client.round_trips
            call(client)
            assert client.round_trips == before + 1, f"{name} needed extra rounds"
            assert transport.last_request_bytes.startswith(MAGIC)
            assert transport.last_response_bytes.startswith(MAGIC)

        with OpServer(Dispatcher(random.Random(2))) as server:
            host, port = server.address
            for name, call in calls:
                before = server.connections_served
                remote = OpClient(RemoteTransport(host, port), public)
                call(remote)
                assert remote.round_trips == 1
                assert (
                    server.connections_served == before + 1
                ), f"{name} used more than one connection"


def test_criterion_6_oracle_cross_checks(key_256, announce):
    """Random-input agreement with brute-force and closed-form oracles.

    Two hundred random 8x8 binary images run through the encrypted
    morphology path and must match set-inclusion checked cell by cell;
    two hundred random histograms must match the cumulative-distribution
    formula; two hundred random gradient fields must match square-root
    and arctangent finishing to 1e-9 relative.
    """
    with criterion(announce, 6, "agreement with independent oracles"):
        public, private = key_256
        rng = random.Random(606)
        elements = (StructuringElement.full(3), StructuringElement.cross(3))

        for _ in range(200):
            image = PlainImage(8, 8, [rng.randrange(2) for _ in range(64)], levels=2)
            encrypted = encrypt_image(public, image, rng=rng)
            for element in elements:
                counts = decrypt_image(
                    private, op_morph_sum(public, encrypted, element, rng)
                )
                eroded = finish_morphology(counts, element, "erosion")
                dilated = finish_morphology(counts, element, "dilation")
                assert eroded == ref_erode(image, element)
                assert dilated == ref_dilate(image, element)
                for y in range(8):
                    for x in range(8):
                        window = [
                            image.get(x + dx, y + dy)
                            if 0 <= x + dx < 8 and 0 <= y + dy < 8
                            else 0
                            for dy in (-1, 0, 1)
                            for dx in (-1, 0, 1)
                            if element.mask[dy + 1][dx + 1]
                        ]
                        assert eroded.get(x, y) == int(all(window))
                        assert dilated.get(x, y) == int(any(window))

        for _ in range(200):
            levels = rng.choice((8, 16))
            image = PlainImage(
                8, 8, [rng.randrange(levels) for _ in range(64)], levels=levels
            )
            histogram = encrypt_histogram(public, image, rng=rng)
            transform = op_equalize_transform(public, histogram, levels, 8, 8)
            values = [decrypt_value(private, entry) for entry in transform]

            counts = [0] * levels
            for pixel in image.pixels:
                counts[pixel] += 1
            cumulative = 0
            for level in range(levels):
                cumulative += counts[level]
                want = Fraction(levels - 1, 64) * cumulative
                assert values[level] == pytest.approx(
                    float(want), rel=1e-9, abs=1e-12
                )

        h1, h2 = GRADIENT_OPERATORS["sobel"]
        for _ in range(200):
            image = PlainImage(8, 8, [rng.randrange(256) for _ in range(64)])
            encrypted = encrypt_image(public, image, rng=rng)
            gx_enc, gy_enc = op_gradient(public, encrypted, h1, h2, rng)
            gx = decrypt_image_values(private, gx_enc)
            gy = decrypt_image_values(private, gy_enc)
            field = finish_gradient(gx, gy)
            for y in range(8):
                for x in range(8):
                    want_mag = math.sqrt(gx[y, x] ** 2 + gy[y, x] ** 2)
                    want_dir = math.atan2(gy[y, x], gx[y, x])
                    if want_dir == -math.pi:
                        want_dir = math.pi
                    assert field.magnitude[y, x] == pytest.approx(
                        want_mag, rel=1e-9, abs=1e-12
                    )
                    assert field.direction[y, x] == pytest.approx(
                        want_dir, rel=1e-9, abs=1e-12
                    )


def test_criterion_7_cost_ordering(ramp, shapes, announce):
    """Measured cost shapes match the design.

    Encryption time grows with the key size (medians of three runs at
    256, 512, and 1024 bits).  On the ops side (medians of five runs at
    the default 256-bit bench size, where op composition rather than
    modular arithmetic dominates): sharpening is the most expensive
    server op, erosion and dilation cost the server the same, and the
    equalization transform is at least a hundred times cheaper than
    low-pass filtering.  Absolute times are reported, not asserted.
    """
    with criterion(announce, 7, "cost ordering across key sizes and ops"):
        crypto_rows = bench_crypto(
            [256, 512, 1024], ramp, repeats=3, rng=random.Random(707)
        )
        encrypt_seconds = {
            row.key_bits: row.seconds for row in crypto_rows if row.stage == "encrypt"
        }
        announce(
            "  reported encrypt medians: "
            + ", ".join(f"{b}-bit {encrypt_seconds[b]:.3f}s" for b in (256, 512, 1024))
        )
        assert encrypt_seconds[256] < encrypt_seconds[512] < encrypt_seconds[1024]

        ops_rows = bench_ops(256, ramp, shapes, repeats=5, rng=random.Random(708))
        server_seconds = {
            row.op: row.seconds for row in ops_rows if row.stage == "server"
        }
        announce(
            "  reported 256-bit server medians: "
            + ", ".join(f"{op} {sec:.4f}s" for op, sec in server_seconds.items())
        )
        assert server_seconds["sharpen"] == max(server_seconds.values())
        assert server_seconds["erosion"] == server_seconds["dilation"]
        assert server_seconds["equalization"] <= server_seconds["lowpass"] / 100.0


def test_criterion_8_cli_pipeline_over_tcp(tmp_path, announce):
    """The command-line chain over a live TCP server matches in-process.

    keygen, encrypt, one apply per operation routed through a real
    socket server, then decrypt; every output file must be byte
    identical to the same chain run without the server, at 512 bits,
    inside a ten minute budget.
    """
    with criterion(announce, 8, "command-line pipeline over a live server"):
        start = time.monotonic()
        gray_path = tmp_path / "gray.pgm"
        binary_path = tmp_path / "binary.pbm"
        save_image(load_sample("ramp"), gray_path)
        save_image(load_sample("shapes"), binary_path)

        public = tmp_path / "keys.cpxk"
        private = tmp_path / "keys.cpxs"
        assert main(
            ["keygen", "--bits", "512", "--seed", "81",
             "--public", str(public), "--private", str(private)]
        ) == EXIT_OK

        gray_ct = tmp_path / "gray.cpxi"
        binary_ct = tmp_path / "binary.cpxi"
        assert main(
            ["encrypt", str(gray_path), "--public", str(public),
             "--out", str(gray_ct), "--seed", "82"]
        ) == EXIT_OK
        assert main(
            ["encrypt", str(binary_path), "--public", str(public),
             "--out", str(binary_ct), "--seed", "83"]
        ) == EXIT_OK

        with OpServer(Dispatcher(random.Random(84))) as server:
            endpoint = "%s:%d" % server.address

            def run_ciphertext(op, source, extra, tag):
                outputs = []
                for route, flags in (("remote", ["--server", endpoint]), ("local", [])):
                    result_ct = tmp_path / f"{tag}-{route}.cpxi"
                    assert main(
                        ["apply", str(source), "--op", op,
                         "--out", str(result_ct), "--public", str(public)]
                        + flags + extra
                    ) == EXIT_OK
                    plain = tmp_path / f"{tag}-{route}.pgm"
                    assert main(
                        ["decrypt", str(result_ct), "--private", str(private),
                         "--out", str(plain)]
                    ) == EXIT_OK
                    outputs.append(plain.read_bytes())
                assert outputs[0] == outputs[1], f"{op} differs across routes"

            def run_plain(op, source, extra, tag, suffix):
                outputs = []
                for route, flags in (("remote", ["--server", endpoint]), ("local", [])):
                    out = tmp_path / f"{tag}-{route}{suffix}"
                    assert main(
                        ["apply", str(source), "--op", op, "--out", str(out),
                         "--public", str(public), "--private", str(private),
                         "--seed", "85"]
                        + flags + extra
                    ) == EXIT_OK
                    outputs.append(out.read_bytes())
                assert outputs[0] == outputs[1], f"{op} differs across routes"

            run_ciphertext("negate", gray_ct, [], "negate")
            run_ciphertext("brightness", gray_ct, ["--value", "40"], "bright")
            run_ciphertext("lpf", gray_ct, [], "lpf")
            run_ciphertext("sharpen", gray_ct, ["--k", "1.0"], "sharpen")
            run_ciphertext("morph-sum", binary_ct, ["--se", "full:3"], "counts")
            run_plain("gradient", gray_path, ["--operator", "sobel"], "grad", ".pgm")
            run_plain("erosion", binary_path, ["--se", "full:3"], "erode", ".pbm")
            run_plain("dilation", binary_path, ["--se", "full:3"], "dilate", ".pbm")
            run_plain("equalize", gray_path, [], "eq", ".pgm")

            assert server.connections_served == 9

        elapsed = time.monotonic() - start
        assert elapsed < 600.0, f"pipeline took {elapsed:.1f}s, budget is 600s"

"""Command-line front end.

Subcommands cover the whole workflow: key generation, image encryption
and decryption, running operations locally or against a server, serving
operations over TCP, accuracy comparison against the plain reference,
and the timing benchmarks.  Exit codes are stable so scripts can branch
on them: 0 success, 2 usage, 3 key problems, 4 image problems, 5 server
problems, 1 anything else.
"""

import argparse
import os
import random
import socket
import sys

from . import reference
from .bench import DEFAULT_OPS, bench_crypto, bench_ops, rows_to_csv
from .data import sample_names
from .encoding import DEFAULT_BASE, DEFAULT_PRECISION, decrypt_value, encrypt_value
from .errors import CryptoPixError, FormatError, ProtocolError
from .image import (
    decrypt_image,
    decrypt_image_values,
    encrypt_image,
    load_encrypted_image,
    load_image,
    save_encrypted_image,
    save_image,
)
from .paillier import (
    SUPPORTED_KEY_BITS,
    generate_keypair,
    load_private_key,
    load_public_key,
    save_private_key,
    save_public_key,
)
from .postprocess import (
    encrypt_histogram,
    finish_equalization,
    finish_gradient,
    finish_morphology,
    magnitude_image,
)
from .server_ops import GRADIENT_OPERATORS, Kernel, StructuringElement
from .transport import (
    Dispatcher,
    LoopbackTransport,
    OpClient,
    OpServer,
    RemoteTransport,
    parse_endpoint,
)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_USAGE = 2
EXIT_KEY = 3
EXIT_IMAGE = 4
EXIT_SERVER = 5

APPLY_OPS = (
    "negate",
    "brightness",
    "lpf",
    "convolve",
    "gradient",
    "sharpen",
    "erosion",
    "dilation",
    "equalize",
)
CIPHERTEXT_OPS = ("negate", "brightness", "lpf", "convolve", "sharpen", "morph-sum")
COMPARE_OPS = ("negate", "brightness", "lpf", "convolve", "sharpen", "gradient")

ENDPOINT_ENV = "CRYPTOPIX_ADDR"


class CliError(Exception):
    """Failure with a specific exit code; message goes to standard error."""

    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _positive_precision(text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"{text!r} is not a number")
    if not 0 < value <= 1:
        raise argparse.ArgumentTypeError("precision must be in (0, 1]")
    return value


def _rng_from_seed(seed):
    return None if seed is None else random.Random(seed)


def _load_public(path):
    try:
        return load_public_key(path)
    except (OSError, FormatError) as exc:
        raise CliError(EXIT_KEY, f"cannot load public key {path}: {exc}")


def _load_private(path):
    try:
        return load_private_key(path)
    except (OSError, FormatError) as exc:
        raise CliError(EXIT_KEY, f"cannot load private key {path}: {exc}")


def _load_plain(path):
    try:
        return load_image(path)
    except (OSError, FormatError, ValueError) as exc:
        raise CliError(EXIT_IMAGE, f"cannot load image {path}: {exc}")


def _load_encrypted(public_key, path):
    try:
        return load_encrypted_image(public_key, path)
    except (OSError, FormatError, ValueError) as exc:
        raise CliError(EXIT_IMAGE, f"cannot load encrypted image {path}: {exc}")


def _sniff_encrypted(path) -> bool:
    """True when the file is an encrypted image, by magic then extension."""
    try:
        with open(path, "rb") as handle:
            magic = handle.read(4)
    except OSError as exc:
        raise CliError(EXIT_IMAGE, f"cannot read {path}: {exc}")
    if magic == b"CPXI":
        return True
    if magic[:1] == b"P":
        return False
    return str(path).endswith(".cpxi")


def _parse_kernel(text: str, post_scale=None) -> Kernel:
    """Kernel specs: ``averaging:N``, ``identity:N``, or rows ``a,b;c,d``."""
    try:
        if text.startswith("averaging:"):
            kernel = Kernel.averaging(int(text.split(":", 1)[1]))
        elif text.startswith("identity:"):
            kernel = Kernel.identity(int(text.split(":", 1)[1]))
        else:
            rows = [
                [float(w) for w in row.split(",")]
                for row in text.split(";")
            ]
            kernel = Kernel.from_rows(rows)
        if post_scale is not None:
            kernel = Kernel(kernel.weights, float(post_scale))
        return kernel
    except (ValueError, IndexError) as exc:
        raise CliError(EXIT_USAGE, f"bad kernel spec {text!r}: {exc}")


def _parse_element(text: str) -> StructuringElement:
    """Element specs: ``full:N``, ``cross:N``, or 0/1 rows ``1,1;1,1``."""
    try:
        if text.startswith("full:"):
            return StructuringElement.full(int(text.split(":", 1)[1]))
        if text.startswith("cross:"):
            return StructuringElement.cross(int(text.split(":", 1)[1]))
        rows = [[int(v) for v in row.split(",")] for row in text.split(";")]
        return StructuringElement.from_rows(rows)
    except (ValueError, IndexError) as exc:
        raise CliError(EXIT_USAGE, f"bad structuring element {text!r}: {exc}")


def _resolve_sample(text, loader):
    if text in sample_names():
        from .data import load_sample

        return load_sample(text)
    return loader(text)


def _make_client(args, public_key, rng):
    """OpClient over TCP when an endpoint is configured, else in-process."""
    endpoint = getattr(args, "server", None) or os.environ.get(ENDPOINT_ENV)
    if endpoint:
        try:
            host, port = parse_endpoint(endpoint)
        except ValueError as exc:
            raise CliError(EXIT_USAGE, str(exc))
        return OpClient(RemoteTransport(host, port), public_key)
    return OpClient(LoopbackTransport(Dispatcher(rng)), public_key)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_keygen(args) -> int:
    rng = _rng_from_seed(args.seed)
    keypair = generate_keypair(args.bits, rng=rng)
    save_public_key(keypair.public, args.public)
    save_private_key(keypair.private, args.private)
    print(f"wrote {args.public} and {args.private} ({args.bits}-bit modulus)", file=sys.stderr)
    return EXIT_OK


def cmd_encrypt(args) -> int:
    public_key = _load_public(args.public)
    image = _load_plain(args.input)
    encrypted = encrypt_image(
        public_key,
        image,
        precision=args.precision,
        base=args.base,
        rng=_rng_from_seed(args.seed),
        workers=args.threads,
    )
    save_encrypted_image(encrypted, args.out)
    return EXIT_OK


def cmd_decrypt(args) -> int:
    private_key = _load_private(args.private)
    encrypted = _load_encrypted(private_key.public_key, args.input)
    image = decrypt_image(private_key, encrypted, clamp=True, workers=args.threads)
    save_image(image, args.out)
    return EXIT_OK


def _apply_ciphertext(args, client, public_key, rng) -> int:
    """Ciphertext in, ciphertext out; no private key involved."""
    if args.op not in CIPHERTEXT_OPS:
        raise CliError(
            EXIT_USAGE,
            f"op {args.op!r} needs client-side finishing; give it a plain image",
        )
    encrypted = _load_encrypted(public_key, args.input)
    if args.op == "negate":
        result = client.negate(encrypted)
    elif args.op == "brightness":
        if args.value is None:
            raise CliError(EXIT_USAGE, "brightness needs --value")
        shift = encrypt_value(
            public_key, args.value, args.precision, base=args.base, rng=rng
        )
        result = client.brightness(encrypted, shift)
    elif args.op in ("lpf", "convolve"):
        kernel = _parse_kernel(args.kernel, args.post_scale)
        result = client.convolve(encrypted, kernel)
    elif args.op == "sharpen":
        kernel = None if args.kernel == "averaging:3" else _parse_kernel(args.kernel)
        result = client.sharpen(encrypted, args.k, kernel)
    else:
        result = client.morph_sum(encrypted, _parse_element(args.se))
    save_encrypted_image(result, args.out)
    return EXIT_OK


def _apply_plain(args, client, keypair, rng) -> int:
    """Full trip: encrypt, run the operation, decrypt, finish, save."""
    image = _load_plain(args.input)
    public_key, private_key = keypair
    if args.op == "equalize":
        histogram = encrypt_histogram(
            public_key, image, args.precision, base=args.base, rng=rng
        )
        transform = client.equalize_transform(
            histogram, image.levels, image.width, image.height
        )
        values = [decrypt_value(private_key, entry) for entry in transform]
        save_image(finish_equalization(image, values), args.out)
        return EXIT_OK

    encrypted = encrypt_image(
        public_key,
        image,
        precision=args.precision,
        base=args.base,
        rng=rng,
        workers=args.threads,
    )
    if args.op == "negate":
        result = client.negate(encrypted)
    elif args.op == "brightness":
        if args.value is None:
            raise CliError(EXIT_USAGE, "brightness needs --value")
        shift = encrypt_value(
            public_key, args.value, args.precision, base=args.base, rng=rng
        )
        result = client.brightness(encrypted, shift)
    elif args.op in ("lpf", "convolve"):
        result = client.convolve(encrypted, _parse_kernel(args.kernel, args.post_scale))
    elif args.op == "gradient":
        gx_enc, gy_enc = client.gradient(encrypted, operator=args.operator)
        gx = decrypt_image_values(private_key, gx_enc, workers=args.threads)
        gy = decrypt_image_values(private_key, gy_enc, workers=args.threads)
        field = finish_gradient(gx, gy)
        save_image(magnitude_image(field, image.levels), args.out)
        return EXIT_OK
    elif args.op == "sharpen":
        kernel = None if args.kernel == "averaging:3" else _parse_kernel(args.kernel)
        result = client.sharpen(encrypted, args.k, kernel)
    elif args.op in ("erosion", "dilation"):
        element = _parse_element(args.se)
        counts = client.morph_sum(encrypted, element)
        decrypted = decrypt_image(private_key, counts, workers=args.threads)
        save_image(finish_morphology(decrypted, element, args.op), args.out)
        return EXIT_OK
    else:
        raise CliError(EXIT_USAGE, f"unknown op {args.op!r}")
    save_image(decrypt_image(private_key, result, clamp=True, workers=args.threads), args.out)
    return EXIT_OK


def cmd_apply(args) -> int:
    rng = _rng_from_seed(args.seed)
    if _sniff_encrypted(args.input):
        if not args.public:
            raise CliError(EXIT_KEY, "encrypted input needs --public")
        public_key = _load_public(args.public)
        client = _make_client(args, public_key, rng)
        return _apply_ciphertext(args, client, public_key, rng)
    if args.public and args.private:
        public_key = _load_public(args.public)
        private_key = _load_private(args.private)
        if private_key.public_key != public_key:
            raise CliError(EXIT_KEY, "public and private keys do not match")
    elif args.public or args.private:
        raise CliError(EXIT_KEY, "plain input needs both --public and --private (or neither)")
    else:
        keypair = generate_keypair(args.bits, rng=rng)
        public_key, private_key = keypair.public, keypair.private
    client = _make_client(args, public_key, rng)
    return _apply_plain(args, client, (public_key, private_key), rng)


def cmd_serve(args) -> int:
    try:
        host, port = parse_endpoint(args.listen)
    except ValueError as exc:
        raise CliError(EXIT_USAGE, str(exc))
    dispatcher = Dispatcher(_rng_from_seed(args.seed), max_payload=args.max_payload)
    try:
        server = OpServer(dispatcher, host, port)
    except OSError as exc:
        raise CliError(EXIT_SERVER, f"cannot listen on {args.listen}: {exc}")
    bound_host, bound_port = server.address
    print(f"listening on {bound_host}:{bound_port}", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.close()
    return EXIT_OK


def cmd_compare(args) -> int:
    image = _resolve_sample(args.input, _load_plain)
    rng = _rng_from_seed(args.seed)
    keypair = generate_keypair(args.bits, rng=rng)
    public_key, private_key = keypair.public, keypair.private
    client = OpClient(LoopbackTransport(Dispatcher(rng)), public_key)
    rows = [reference.ERROR_CSV_HEADER]
    for precision in args.precisions:
        encrypted = encrypt_image(
            public_key, image, precision=precision, base=args.base, rng=rng
        )
        if args.op == "gradient":
            h1, h2 = GRADIENT_OPERATORS[args.operator]
            gx_enc, gy_enc = client.gradient(encrypted, operator=args.operator)
            ref_gx, ref_gy = reference.ref_gradient(image, h1, h2)
            for label, result, expected in (
                (f"{args.operator}-gx", gx_enc, ref_gx),
                (f"{args.operator}-gy", gy_enc, ref_gy),
            ):
                report = reference.compare(
                    decrypt_image_values(private_key, result), expected
                )
                rows.append(report.csv_row(label, precision))
            continue
        if args.op == "negate":
            result = client.negate(encrypted)
            expected = reference.ref_negate(image)
        elif args.op == "brightness":
            shift = encrypt_value(
                public_key, args.value, precision, base=args.base, rng=rng
            )
            result = client.brightness(encrypted, shift)
            expected = reference.ref_brightness(image, args.value, clamp=False)
        elif args.op in ("lpf", "convolve"):
            kernel = _parse_kernel(args.kernel, args.post_scale)
            result = client.convolve(encrypted, kernel)
            expected = reference.ref_convolve_values(image, kernel)
        else:
            result = client.sharpen(encrypted, args.k)
            expected = reference.ref_sharpen_values(image, args.k)
        report = reference.compare(decrypt_image_values(private_key, result), expected)
        rows.append(report.csv_row(args.op, precision))
    text = "\n".join(rows) + "\n"
    if args.out:
        with open(args.out, "w", encoding="ascii") as handle:
            handle.write(text)
    else:
        print(text, end="")
    return EXIT_OK


def cmd_bench(args) -> int:
    image = _resolve_sample(args.image, _load_plain)
    binary = _resolve_sample(args.binary, _load_plain)
    rng = _rng_from_seed(args.seed)
    rows = []
    if args.suite in ("crypto", "all"):
        rows.extend(
            bench_crypto(
                args.bits,
                image,
                precision=args.precision,
                repeats=args.repeats,
                rng=rng,
                workers=args.threads,
            )
        )
    if args.suite in ("ops", "all"):
        rows.extend(
            bench_ops(
                max(args.bits),
                image,
                binary,
                ops=args.ops,
                repeats=args.repeats,
                precision=args.precision,
                rng=rng,
            )
        )
    text = rows_to_csv(rows)
    if args.out:
        with open(args.out, "w", encoding="ascii") as handle:
            handle.write(text)
    else:
        print(text, end="")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def _add_common_crypto(parser):
    parser.add_argument(
        "--precision", type=_positive_precision, default=DEFAULT_PRECISION,
        help="smallest fraction kept exactly (default 1e-8)",
    )
    parser.add_argument("--base", type=int, default=DEFAULT_BASE, help="encoding base")
    parser.add_argument("--seed", type=int, default=None, help="deterministic randomness")
    parser.add_argument(
        "--threads", type=int, default=os.cpu_count() or 1,
        help="worker threads for pixel crypto",
    )


def _add_op_params(parser):
    parser.add_argument("--value", type=int, default=None, help="brightness shift")
    parser.add_argument(
        "--kernel", default="averaging:3",
        help="averaging:N, identity:N, or rows like '0,1,0;1,2,1;0,1,0'",
    )
    parser.add_argument("--post-scale", type=float, default=None, help="kernel post factor")
    parser.add_argument("--k", type=float, default=1.0, help="sharpening amount")
    parser.add_argument(
        "--operator", choices=sorted(GRADIENT_OPERATORS), default="sobel",
        help="gradient operator",
    )
    parser.add_argument(
        "--se", default="full:3",
        help="structuring element: full:N, cross:N, or 0/1 rows like '1,1;1,1'",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cryptopix",
        description="Image processing on Paillier-encrypted rasters.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("keygen", help="generate a key pair")
    p.add_argument("--bits", type=int, choices=SUPPORTED_KEY_BITS, default=1024)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--public", default="public.cpxk", help="public key output path")
    p.add_argument("--private", default="private.cpxs", help="private key output path")
    p.set_defaults(func=cmd_keygen)

    p = sub.add_parser("encrypt", help="encrypt a PGM/PBM image")
    p.add_argument("input", help="plain image path")
    p.add_argument("--public", required=True, help="public key path")
    p.add_argument("--out", required=True, help="encrypted image output path")
    _add_common_crypto(p)
    p.set_defaults(func=cmd_encrypt)

    p = sub.add_parser("decrypt", help="decrypt an encrypted image")
    p.add_argument("input", help="encrypted image path")
    p.add_argument("--private", required=True, help="private key path")
    p.add_argument("--out", required=True, help="plain image output path")
    p.add_argument("--threads", type=int, default=os.cpu_count() or 1)
    p.set_defaults(func=cmd_decrypt)

    p = sub.add_parser("apply", help="run an operation on an image")
    p.add_argument("input", help="plain or encrypted image path")
    p.add_argument("--op", choices=sorted(set(APPLY_OPS) | set(CIPHERTEXT_OPS)), required=True)
    p.add_argument("--out", required=True, help="output path")
    p.add_argument("--public", default=None, help="public key path")
    p.add_argument("--private", default=None, help="private key path")
    p.add_argument("--bits", type=int, choices=SUPPORTED_KEY_BITS, default=1024,
                   help="bits for the ephemeral key when none is supplied")
    p.add_argument("--server", default=None,
                   help=f"host:port of a running server (default ${ENDPOINT_ENV})")
    _add_common_crypto(p)
    _add_op_params(p)
    p.set_defaults(func=cmd_apply)

    p = sub.add_parser("serve", help="serve operations over TCP")
    p.add_argument("--listen", default="127.0.0.1:0", help="host:port to bind")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--max-payload", type=int, default=1 << 28)
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("compare", help="error statistics against the plain reference")
    p.add_argument("input", help="image path or bundled sample name")
    p.add_argument("--op", choices=COMPARE_OPS, required=True)
    p.add_argument(
        "--precisions", type=lambda t: [_positive_precision(v) for v in t.split(",")],
        default=[1e-2, DEFAULT_PRECISION], help="comma-separated precision list",
    )
    p.add_argument("--bits", type=int, choices=SUPPORTED_KEY_BITS, default=512)
    p.add_argument("--base", type=int, default=DEFAULT_BASE)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None, help="CSV output path (default stdout)")
    _add_op_params(p)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("bench", help="timing benchmarks")
    p.add_argument("--suite", choices=("crypto", "ops", "all"), default="all")
    p.add_argument(
        "--bits", type=lambda t: [int(v) for v in t.split(",")], default=[256, 512],
        help="comma-separated key sizes; ops suite uses the largest",
    )
    p.add_argument("--image", default="ramp", help="grayscale image path or sample name")
    p.add_argument("--binary", default="shapes", help="binary image path or sample name")
    p.add_argument("--ops", type=lambda t: t.split(","), default=list(DEFAULT_OPS))
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--precision", type=_positive_precision, default=DEFAULT_PRECISION)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--threads", type=int, default=1,
                   help="encryption threads (1 keeps timings stable)")
    p.add_argument("--out", default=None, help="CSV output path (default stdout)")
    p.set_defaults(func=cmd_bench)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except ProtocolError as exc:
        print(f"server error: {exc}", file=sys.stderr)
        return EXIT_SERVER
    except (ConnectionError, socket.timeout, socket.gaierror) as exc:
        print(f"cannot reach server: {exc}", file=sys.stderr)
        return EXIT_SERVER
    except CryptoPixError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())

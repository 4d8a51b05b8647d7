"""Privacy-preserving image processing over Paillier-encrypted images.

A client encrypts an image pixel by pixel and hands it to a server that
computes on the ciphertexts alone: negation, brightness adjustment,
spatial filtering, edge detection, sharpening, binary morphology, and
histogram equalization.  The client decrypts the result and finishes
the cheap plaintext steps.  Every operation costs exactly one
client/server round trip.
"""

from .encoding import (
    DEFAULT_BASE,
    DEFAULT_PRECISION,
    EncodedNumber,
    EncryptedNumber,
    Precision,
    decode,
    decrypt_value,
    encode,
    encrypt_value,
)
from .errors import (
    AlignmentError,
    CryptoPixError,
    EncodingOverflowError,
    FormatError,
    KeyMismatchError,
    MalformedCiphertextError,
    OverflowDetectedError,
    ProtocolError,
)
from .image import (
    EncryptedImage,
    PlainImage,
    decrypt_image,
    decrypt_image_values,
    encrypt_image,
    expansion_factor,
    load_image,
    save_image,
)
from .paillier import (
    KeyPair,
    PrivateKey,
    PublicKey,
    generate_keypair,
    load_private_key,
    load_public_key,
    save_private_key,
    save_public_key,
)
from .server_ops import (
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

__version__ = "0.1.0"

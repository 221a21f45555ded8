import re
import zlib

ENDS_WITH_ADLER32 = re.compile(r"-[0-9]+\Z")


def to_slug(label: str) -> str:
    """
    Replace everything except letters, digits, dot, dash and underscore with
    underscores, allowing method labels like ``CE+DRS+GIT`` to be used in file
    names.

    A checksum is added at the end (to avoid collisions between e.g.
    ``CE+DRS`` and ``CE DRS``) if at least one replacement is made, or if the
    input already ends like a checksum.

    >>> to_slug("erm")
    'erm'
    >>> to_slug("CE+DRS") != to_slug("CE DRS")
    True
    >>> to_slug("CE+DRS").startswith("CE_DRS-")
    True
    """
    safe_name = re.sub(r"[^-_.a-z0-9]", "_", label, flags=re.IGNORECASE)
    if safe_name == label and not ENDS_WITH_ADLER32.search(label):
        return label
    unique_suffix: int = zlib.adler32(label.encode())
    return f"{safe_name}-{unique_suffix}"

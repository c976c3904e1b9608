"""Time- and device-bound query tokens that keep cloned PWA wrappers out."""
from spare.codec import KeyMaterial, Token, TokenPayload, embed_token, extract_token, mint_token, open_token
from spare.firewall import Decision, DeviceLedger, Firewall, FirewallConfig, Mode, Reason, Verdict, validate

__version__ = "0.1.0"

__all__ = [
    "Decision",
    "DeviceLedger",
    "Firewall",
    "FirewallConfig",
    "KeyMaterial",
    "Mode",
    "Reason",
    "Token",
    "TokenPayload",
    "Verdict",
    "embed_token",
    "extract_token",
    "mint_token",
    "open_token",
    "validate",
]

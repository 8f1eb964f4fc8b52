//! Ed25519 verification of interaction requests.
//!
//! Discord signs `timestamp || body` with the application's key and sends
//! the hex signature in `X-Signature-Ed25519` and the timestamp in
//! `X-Signature-Timestamp`.

use ring::signature::{UnparsedPublicKey, ED25519};

pub const SIGNATURE_HEADER: &str = "x-signature-ed25519";
pub const TIMESTAMP_HEADER: &str = "x-signature-timestamp";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum VerifyError {
    #[error("public key must be 32 bytes of hex")]
    BadKey,
    #[error("signature header is not 64 bytes of hex")]
    BadSignatureEncoding,
    #[error("signature does not match")]
    Mismatch,
}

#[derive(Debug, Clone)]
pub struct InteractionVerifier {
    key: UnparsedPublicKey<Vec<u8>>,
}

impl InteractionVerifier {
    pub fn from_hex(public_key: &str) -> Result<Self, VerifyError> {
        let bytes = hex::decode(public_key.trim()).map_err(|_| VerifyError::BadKey)?;
        if bytes.len() != 32 {
            return Err(VerifyError::BadKey);
        }
        Ok(Self { key: UnparsedPublicKey::new(&ED25519, bytes) })
    }

    pub fn verify(&self, timestamp: &str, body: &[u8], signature_hex: &str) -> Result<(), VerifyError> {
        let sig = hex::decode(signature_hex.trim()).map_err(|_| VerifyError::BadSignatureEncoding)?;
        if sig.len() != 64 {
            return Err(VerifyError::BadSignatureEncoding);
        }
        let mut msg = Vec::with_capacity(timestamp.len() + body.len());
        msg.extend_from_slice(timestamp.as_bytes());
        msg.extend_from_slice(body);
        self.key.verify(&msg, &sig).map_err(|_| VerifyError::Mismatch)
    }
}

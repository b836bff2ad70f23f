//! Deterministic byte encoding used as input to hashing and signing.
//!
//! Every value is a sequence of length-prefixed fields, each written as
//! `<decimal length>:<bytes>`. The first field is a type tag. Integers are
//! written as decimal ASCII and then length-prefixed like any other field.
//! Lists write their element count, then each element as one nested field.
//! The encoding is self-delimiting, so concatenating two encodings is
//! unambiguous.

use crate::error::Result;

#[derive(Debug, Clone)]
pub struct Encoder {
    out: Vec<u8>,
}

impl Encoder {
    pub fn new(tag: &str) -> Self {
        let mut enc = Encoder { out: Vec::new() };
        enc.str(tag);
        enc
    }

    pub fn bytes(&mut self, b: &[u8]) -> &mut Self {
        self.out.extend_from_slice(b.len().to_string().as_bytes());
        self.out.push(b':');
        self.out.extend_from_slice(b);
        self
    }

    pub fn str(&mut self, s: &str) -> &mut Self {
        self.bytes(s.as_bytes())
    }

    pub fn int(&mut self, v: i64) -> &mut Self {
        self.str(&v.to_string())
    }

    pub fn uint(&mut self, v: u64) -> &mut Self {
        self.str(&v.to_string())
    }

    pub fn nested<T: Canonical + ?Sized>(&mut self, value: &T) -> &mut Self {
        let inner = value.to_canonical();
        self.bytes(&inner)
    }

    pub fn list<T: Canonical>(&mut self, items: &[T]) -> &mut Self {
        self.uint(items.len() as u64);
        for item in items {
            self.nested(item);
        }
        self
    }

    pub fn str_list<S: AsRef<str>>(&mut self, items: &[S]) -> &mut Self {
        self.uint(items.len() as u64);
        for item in items {
            self.str(item.as_ref());
        }
        self
    }

    pub fn finish(self) -> Vec<u8> {
        self.out
    }
}

pub trait Canonical {
    const TAG: &'static str;

    fn encode_fields(&self, enc: &mut Encoder);

    fn validate(&self) -> Result<()> {
        Ok(())
    }

    /// Encoding without the invariant check.
    fn to_canonical(&self) -> Vec<u8> {
        let mut enc = Encoder::new(Self::TAG);
        self.encode_fields(&mut enc);
        enc.finish()
    }
}

/// Validates `value` and returns its canonical encoding.
pub fn canonical_serialize<T: Canonical>(value: &T) -> Result<Vec<u8>> {
    value.validate()?;
    Ok(value.to_canonical())
}

/// Encoding of a list as a standalone value with its own tag.
pub fn encode_list<T: Canonical>(tag: &str, items: &[T]) -> Vec<u8> {
    let mut enc = Encoder::new(tag);
    enc.list(items);
    enc.finish()
}

use alloc::vec::Vec;
use core::fmt;

use serde::de::{self, Deserializer, SeqAccess, Visitor};
use serde::ser::{SerializeSeq, Serializer};
use serde::{Deserialize, Serialize};

/// Largest universe a [`StateSet`] or [`ServiceSet`] can address.
pub const MAX_UNIVERSE: u8 = 64;

macro_rules! id_and_set {
    ($(#[$idmeta:meta])* $id:ident, $(#[$setmeta:meta])* $set:ident, $what:literal) => {
        $(#[$idmeta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(try_from = "u8", into = "u8")]
        pub struct $id(u8);

        impl $id {
            /// Returns `None` outside `1..=MAX_UNIVERSE`.
            pub const fn new(value: u8) -> Option<Self> {
                if value >= 1 && value <= MAX_UNIVERSE {
                    Some(Self(value))
                } else {
                    None
                }
            }

            pub const fn get(self) -> u8 {
                self.0
            }

            const fn bit(self) -> u64 {
                1u64 << (self.0 - 1)
            }
        }

        impl TryFrom<u8> for $id {
            type Error = &'static str;

            fn try_from(value: u8) -> Result<Self, Self::Error> {
                Self::new(value).ok_or(concat!($what, " id out of range 1..=64"))
            }
        }

        impl From<$id> for u8 {
            fn from(id: $id) -> u8 {
                id.0
            }
        }

        impl fmt::Display for $id {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}", self.0)
            }
        }

        $(#[$setmeta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
        pub struct $set(u64);

        impl $set {
            pub const fn empty() -> Self {
                Self(0)
            }

            /// Members `1..=n`.
            pub const fn full(n: u8) -> Self {
                if n >= 64 {
                    Self(u64::MAX)
                } else {
                    Self((1u64 << n) - 1)
                }
            }

            /// Builds a set from its canonical integer form (bit `i-1` for member `i`).
            pub const fn from_bits(bits: u64) -> Self {
                Self(bits)
            }

            pub const fn bits(self) -> u64 {
                self.0
            }

            /// Convenience constructor that panics on ids outside `1..=64`.
            pub fn of(ids: &[u8]) -> Self {
                ids.iter()
                    .map(|&v| $id::new(v).expect(concat!("invalid ", $what, " id")))
                    .collect()
            }

            pub const fn contains(self, id: $id) -> bool {
                self.0 & id.bit() != 0
            }

            pub fn insert(&mut self, id: $id) -> bool {
                let fresh = !self.contains(id);
                self.0 |= id.bit();
                fresh
            }

            pub fn remove(&mut self, id: $id) -> bool {
                let present = self.contains(id);
                self.0 &= !id.bit();
                present
            }

            pub const fn is_empty(self) -> bool {
                self.0 == 0
            }

            pub const fn len(self) -> u32 {
                self.0.count_ones()
            }

            pub const fn union(self, other: Self) -> Self {
                Self(self.0 | other.0)
            }

            pub const fn intersection(self, other: Self) -> Self {
                Self(self.0 & other.0)
            }

            pub const fn is_subset(self, other: Self) -> bool {
                self.0 & !other.0 == 0
            }

            /// True when every member lies in `1..=n`.
            pub const fn within(self, n: u8) -> bool {
                self.is_subset(Self::full(n))
            }

            pub fn max(self) -> Option<$id> {
                if self.0 == 0 {
                    None
                } else {
                    Some($id((64 - self.0.leading_zeros()) as u8))
                }
            }

            /// Members in ascending order.
            pub fn iter(self) -> impl Iterator<Item = $id> {
                (1..=MAX_UNIVERSE).map($id).filter(move |id| self.contains(*id))
            }

            pub fn to_vec(self) -> Vec<u8> {
                self.iter().map($id::get).collect()
            }
        }

        impl FromIterator<$id> for $set {
            fn from_iter<I: IntoIterator<Item = $id>>(iter: I) -> Self {
                let mut set = Self::empty();
                for id in iter {
                    set.insert(id);
                }
                set
            }
        }

        impl fmt::Display for $set {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("{")?;
                for (i, id) in self.iter().enumerate() {
                    if i > 0 {
                        f.write_str(",")?;
                    }
                    write!(f, "{id}")?;
                }
                f.write_str("}")
            }
        }

        impl Serialize for $set {
            fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
                let mut seq = serializer.serialize_seq(Some(self.len() as usize))?;
                for id in self.iter() {
                    seq.serialize_element(&id.get())?;
                }
                seq.end()
            }
        }

        impl<'de> Deserialize<'de> for $set {
            fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
                struct SetVisitor;

                impl<'de> Visitor<'de> for SetVisitor {
                    type Value = $set;

                    fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                        f.write_str(concat!("a strictly ascending list of ", $what, " ids"))
                    }

                    fn visit_seq<A: SeqAccess<'de>>(self, mut seq: A) -> Result<$set, A::Error> {
                        let mut set = $set::empty();
                        let mut last = 0u8;
                        while let Some(v) = seq.next_element::<u8>()? {
                            let id = $id::new(v).ok_or_else(|| {
                                de::Error::custom(concat!($what, " id out of range 1..=64"))
                            })?;
                            if v <= last {
                                return Err(de::Error::custom(concat!(
                                    $what,
                                    " ids must be strictly ascending"
                                )));
                            }
                            last = v;
                            set.insert(id);
                        }
                        Ok(set)
                    }
                }

                deserializer.deserialize_seq(SetVisitor)
            }
        }
    };
}

id_and_set!(
    /// A numbered user state such as "On Duty" or "Suspended".
    StateId,
    /// A set of states, stored LSB-first: state 1 is bit 0.
    StateSet,
    "state"
);

id_and_set!(
    /// A numbered, fine-grained service offered by a service node.
    ServiceId,
    /// A set of services, stored LSB-first: service 1 is bit 0.
    ServiceSet,
    "service"
);

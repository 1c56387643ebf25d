//! Strongly typed identifiers.
//!
//! Every identifier is a dense sequence number allocated by the owning
//! registry, which keeps replay bit-exact: the same command log always
//! produces the same ids.

use std::fmt;

use serde::{Deserialize, Serialize};

/// Logical time in ticks.
pub type Tick = u64;

/// Integer credit amount. Fractional credits do not exist.
pub type Credits = u64;

macro_rules! id_type {
    ($(#[$meta:meta])* $name:ident, $prefix:literal) => {
        $(#[$meta])*
        #[derive(
            Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
        )]
        #[serde(transparent)]
        pub struct $name(pub u64);

        impl $name {
            pub(crate) fn from_index(index: usize) -> Self {
                Self(index as u64)
            }

            #[allow(dead_code)]
            pub(crate) fn index(self) -> usize {
                self.0 as usize
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, concat!($prefix, "{}"), self.0)
            }
        }
    };
}

id_type!(
    /// Ledger account. `0` is the treasury, `1` the escrow pool.
    AccountId,
    "acct-"
);
id_type!(TxnId, "txn-");
id_type!(HoldId, "hold-");
id_type!(UserId, "user-");
id_type!(PaperId, "paper-");
id_type!(FragmentId, "frag-");
id_type!(AnchorId, "anchor-");
id_type!(BountyId, "bounty-");
id_type!(BidId, "bid-");
id_type!(AssignmentId, "asg-");
id_type!(ReviewId, "review-");
id_type!(MetaReviewId, "meta-");
id_type!(BallotId, "ballot-");
id_type!(ThreadId, "thread-");
id_type!(CommentId, "comment-");
id_type!(MarketId, "market-");
id_type!(StakeId, "stake-");
id_type!(FlagId, "flag-");
id_type!(ActionId, "action-");

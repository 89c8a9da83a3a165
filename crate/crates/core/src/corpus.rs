//! Bundled protocol descriptions.

use crate::parser::parse_protocol;
use crate::strand::Protocol;

pub const WOO_LAM_PI3: &str = include_str!("../corpus/woo_lam_pi3.spc");
pub const LOWE_YAHALOM: &str = include_str!("../corpus/lowe_yahalom.spc");

pub fn woo_lam_pi3() -> Protocol {
    parse_protocol(WOO_LAM_PI3).expect("bundled Woo-Lam description parses")
}

pub fn lowe_yahalom() -> Protocol {
    parse_protocol(LOWE_YAHALOM).expect("bundled Yahalom description parses")
}

/// The two bundled protocols, Woo-Lam first.
pub fn pair() -> (Protocol, Protocol) {
    (woo_lam_pi3(), lowe_yahalom())
}

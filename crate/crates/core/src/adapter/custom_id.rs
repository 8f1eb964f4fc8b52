//! Interaction custom-ids: `apolo.v1.<case_id>.<action>`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::engine::CaseState;
use crate::ids::CaseId;

pub const PREFIX: &str = "apolo.v1.";
pub const MAX_CUSTOM_ID_LEN: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    VreqYes,
    VreqNo,
    OapoYes,
    OapoNo,
    MreqOk,
    MreqNo,
    MresOk,
    MresNo,
    VfinOk,
    VfinNo,
    Unmute,
}

/// Who may press a button.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gate {
    Victim,
    Offender,
    Moderator,
}

impl Action {
    pub const ALL: [Action; 11] = [
        Action::VreqYes,
        Action::VreqNo,
        Action::OapoYes,
        Action::OapoNo,
        Action::MreqOk,
        Action::MreqNo,
        Action::MresOk,
        Action::MresNo,
        Action::VfinOk,
        Action::VfinNo,
        Action::Unmute,
    ];

    pub fn token(self) -> &'static str {
        match self {
            Action::VreqYes => "vreq_yes",
            Action::VreqNo => "vreq_no",
            Action::OapoYes => "oapo_yes",
            Action::OapoNo => "oapo_no",
            Action::MreqOk => "mreq_ok",
            Action::MreqNo => "mreq_no",
            Action::MresOk => "mres_ok",
            Action::MresNo => "mres_no",
            Action::VfinOk => "vfin_ok",
            Action::VfinNo => "vfin_no",
            Action::Unmute => "unmute",
        }
    }

    pub fn gate(self) -> Gate {
        match self {
            Action::VreqYes | Action::VreqNo | Action::VfinOk | Action::VfinNo => Gate::Victim,
            Action::OapoYes | Action::OapoNo => Gate::Offender,
            Action::MreqOk | Action::MreqNo | Action::MresOk | Action::MresNo | Action::Unmute => {
                Gate::Moderator
            }
        }
    }

    /// The only state in which the action means anything.
    pub fn state(self) -> CaseState {
        match self {
            Action::VreqYes | Action::VreqNo => CaseState::AwaitVictimRequest,
            Action::MreqOk | Action::MreqNo => CaseState::AwaitRequestReview,
            Action::OapoYes | Action::OapoNo => CaseState::AwaitOffenderApology,
            Action::MresOk | Action::MresNo => CaseState::AwaitResponseReview,
            Action::VfinOk | Action::VfinNo => CaseState::AwaitVictimVerdict,
            Action::Unmute => CaseState::AwaitUnmute,
        }
    }

    /// Yes-buttons that open a text modal before anything is submitted.
    pub fn needs_text(self) -> bool {
        matches!(self, Action::VreqYes | Action::OapoYes)
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for Action {
    type Err = CustomIdError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Action::ALL
            .into_iter()
            .find(|a| a.token() == s)
            .ok_or_else(|| CustomIdError(s.to_owned()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("malformed custom id {0:?}")]
pub struct CustomIdError(pub String);

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct InteractionCustomId {
    pub case_id: CaseId,
    pub action: Action,
}

impl InteractionCustomId {
    pub fn new(case_id: CaseId, action: Action) -> Self {
        Self { case_id, action }
    }

    pub fn parse(s: &str) -> Result<Self, CustomIdError> {
        let err = || CustomIdError(s.to_owned());
        if s.len() > MAX_CUSTOM_ID_LEN {
            return Err(err());
        }
        let rest = s.strip_prefix(PREFIX).ok_or_else(err)?;
        let (case, action) = rest.rsplit_once('.').ok_or_else(err)?;
        let case_id = CaseId::parse(case).map_err(|_| err())?;
        let action = action.parse().map_err(|_| err())?;
        Ok(Self { case_id, action })
    }
}

impl fmt::Display for InteractionCustomId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{PREFIX}{}.{}", self.case_id, self.action)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn formats_and_parses() {
        let id = InteractionCustomId::new(CaseId::from_number(5), Action::VreqYes);
        assert_eq!(id.to_string(), "apolo.v1.5.vreq_yes");
        assert_eq!(InteractionCustomId::parse("apolo.v1.5.vreq_yes").unwrap(), id);
        for bad in [
            "apolo.v2.5.vreq_yes",
            "apolo.v1.5.vreq_maybe",
            "apolo.v1..unmute",
            "apolo.v1.a.b.unmute",
            "apolo.v1.5",
            "BTN_REPORT_OPEN",
        ] {
            assert!(InteractionCustomId::parse(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn longest_id_fits() {
        let id = InteractionCustomId::new(CaseId::parse("x".repeat(64)).unwrap(), Action::VreqYes);
        assert!(id.to_string().len() <= MAX_CUSTOM_ID_LEN);
    }

    proptest! {
        #[test]
        fn bijective(case in "[A-Za-z0-9_-]{1,64}", idx in 0usize..11) {
            let id = InteractionCustomId::new(CaseId::parse(case).unwrap(), Action::ALL[idx]);
            let s = id.to_string();
            prop_assert!(s.len() <= MAX_CUSTOM_ID_LEN);
            prop_assert_eq!(InteractionCustomId::parse(&s).unwrap(), id);
        }
    }
}

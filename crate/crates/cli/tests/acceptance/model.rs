//! Hand-written workflow model, independent of the engine. Each waiting stage
//! lists the events it accepts and where they lead; timeouts, mute expiry and
//! cancellation are accepted everywhere.

use std::collections::BTreeSet;

pub type Path = (Vec<&'static str>, &'static str, &'static str);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Stage {
    VictimRequest,
    RequestReview,
    OffenderApology,
    ResponseReview,
    VictimVerdict,
    Unmute,
}

enum Next {
    Wait(Stage),
    Punitive(&'static str),
    Restored,
}

#[derive(Debug, Clone, Copy)]
pub struct Model {
    pub review: bool,
    pub max_attempts: u32,
    pub auto_unmute: bool,
}

impl Model {
    fn moves(&self, stage: Stage, attempts: u32) -> Vec<(&'static str, Next, u32)> {
        use Next::*;
        use Stage::*;
        let mut out = match stage {
            VictimRequest => vec![
                ("VictimRequested", Wait(if self.review { RequestReview } else { OffenderApology }), attempts),
                ("VictimDeclined", Punitive("victim_declined"), attempts),
            ],
            RequestReview => vec![
                ("RequestApproved", Wait(OffenderApology), attempts),
                ("RequestRejected", Punitive("request_rejected"), attempts),
            ],
            OffenderApology => vec![
                ("OffenderApologized", Wait(ResponseReview), attempts + 1),
                ("OffenderDeclined", Punitive("offender_declined"), attempts),
            ],
            ResponseReview => vec![
                ("ResponseApproved", Wait(VictimVerdict), attempts),
                (
                    "ResponseRejected",
                    if attempts < self.max_attempts { Wait(OffenderApology) } else { Punitive("response_rejected_final") },
                    attempts,
                ),
            ],
            VictimVerdict => vec![
                ("VictimAccepted", if self.auto_unmute { Restored } else { Wait(Unmute) }, attempts),
                ("VictimRejected", Punitive("victim_rejected"), attempts),
            ],
            Unmute => vec![("UnmuteExecuted", Restored, attempts)],
        };
        let timeout = match stage {
            VictimRequest => "victim_timeout",
            RequestReview => "request_review_timeout",
            OffenderApology => "offender_timeout",
            ResponseReview => "response_review_timeout",
            VictimVerdict => "verdict_timeout",
            Unmute => "unmute_window_elapsed",
        };
        let elapsed = if stage == Unmute { "unmute_window_elapsed" } else { "mute_elapsed" };
        out.push(("StageTimedOut", Punitive(timeout), attempts));
        out.push(("MuteElapsed", Punitive(elapsed), attempts));
        out.push(("ModeratorCancelled", Punitive("moderator_cancelled"), attempts));
        out
    }

    pub fn paths(&self) -> BTreeSet<Path> {
        let mut out = BTreeSet::new();
        let mut prefix = Vec::new();
        self.walk(Stage::VictimRequest, 0, &mut prefix, &mut out);
        out
    }

    fn walk(&self, stage: Stage, attempts: u32, prefix: &mut Vec<&'static str>, out: &mut BTreeSet<Path>) {
        for (event, next, attempts) in self.moves(stage, attempts) {
            prefix.push(event);
            match next {
                Next::Wait(s) => self.walk(s, attempts, prefix, out),
                Next::Punitive(reason) => {
                    out.insert((prefix.clone(), "closed_punitive", reason));
                }
                Next::Restored => {
                    out.insert((prefix.clone(), "resolved_restored", "restored"));
                }
            }
            prefix.pop();
        }
    }
}

//! Fault-injection scripts: `t=<step> site=<id> <online|offline|change ...>`.

use crate::propagation::SchemaChange;
use crate::schema::SiteId;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FaultAction {
    Online,
    Offline,
    Change(SchemaChange),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FaultEvent {
    pub step: u64,
    pub site: SiteId,
    pub action: FaultAction,
}

impl FaultEvent {
    pub fn parse(line: &str) -> Result<FaultEvent, String> {
        let mut tokens = line.split_whitespace();
        let step = tokens
            .next()
            .and_then(|t| t.strip_prefix("t="))
            .ok_or("expected `t=<step>`")?
            .parse::<u64>()
            .map_err(|e| format!("bad step: {e}"))?;
        let site = tokens.next().and_then(|t| t.strip_prefix("site=")).ok_or("expected `site=<id>`")?;
        let action = match tokens.next() {
            Some("online") => FaultAction::Online,
            Some("offline") => FaultAction::Offline,
            Some("change") => {
                let rest: Vec<&str> = tokens.by_ref().collect();
                FaultAction::Change(SchemaChange::parse_line(&rest.join(" ")).map_err(|e| e.to_string())?)
            }
            Some(other) => return Err(format!("unknown action `{other}`")),
            None => return Err("missing action".into()),
        };
        if let Some(extra) = tokens.next() {
            return Err(format!("unexpected `{extra}`"));
        }
        Ok(FaultEvent { step, site: SiteId::new(site), action })
    }
}

/// Parses a whole script; steps must not decrease.
pub fn parse_fault_script(text: &str) -> Result<Vec<FaultEvent>, String> {
    let mut events: Vec<FaultEvent> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let event = FaultEvent::parse(line).map_err(|e| format!("line {}: {e}", i + 1))?;
        if events.last().is_some_and(|prev| prev.step > event.step) {
            return Err(format!("line {}: step goes backwards", i + 1));
        }
        events.push(event);
    }
    Ok(events)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_script() {
        let script = "# outage\nt=1 site=B offline\nt=2 site=B change kind=AddClass class=x\nt=2 site=B online\n";
        let events = parse_fault_script(script).unwrap();
        assert_eq!(events.len(), 3);
        assert_eq!(events[0].action, FaultAction::Offline);
        assert_eq!(events[1].action, FaultAction::Change(SchemaChange::AddClass { class: "x".into() }));
        assert!(parse_fault_script("t=3 site=B online\nt=1 site=B offline\n").is_err());
        assert!(parse_fault_script("t=1 site=B reboot\n").is_err());
    }
}

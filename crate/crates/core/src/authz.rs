//! Bearer-token authentication and hierarchical resource-path policies.
//!
//! A policy grants a set of permissions on a resource path and everything
//! below it. Ancestry is decided segment by segment, so `/programs/open`
//! covers `/programs/open/projects/A` but not `/programs/openX`.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Permission {
    Read,
    Create,
    Update,
    Delete,
    ReadStorage,
}

impl Permission {
    pub const ALL: [Permission; 5] = [
        Permission::Read,
        Permission::Create,
        Permission::Update,
        Permission::Delete,
        Permission::ReadStorage,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Permission::Read => "read",
            Permission::Create => "create",
            Permission::Update => "update",
            Permission::Delete => "delete",
            Permission::ReadStorage => "read-storage",
        }
    }
}

impl fmt::Display for Permission {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// An absolute, slash-separated resource path.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ResourcePath {
    segments: Vec<String>,
}

impl ResourcePath {
    pub fn segments(&self) -> &[String] {
        &self.segments
    }

    /// True if `self` equals `other` or is a segment-wise prefix of it.
    pub fn covers(&self, other: &ResourcePath) -> bool {
        self.segments.len() <= other.segments.len() && self.segments.iter().zip(&other.segments).all(|(a, b)| a == b)
    }

    pub fn project(program: &str, project: &str) -> ResourcePath {
        ResourcePath {
            segments: vec!["programs".into(), program.into(), "projects".into(), project.into()],
        }
    }

    pub fn service(name: &str) -> ResourcePath {
        ResourcePath {
            segments: vec!["services".into(), name.into()],
        }
    }
}

impl FromStr for ResourcePath {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let rest = s
            .strip_prefix('/')
            .ok_or_else(|| Error::Config(format!("resource path {s:?} must start with '/'")))?;
        let segments: Vec<String> = rest
            .split('/')
            .filter(|seg| !seg.is_empty())
            .map(str::to_owned)
            .collect();
        Ok(ResourcePath { segments })
    }
}

impl fmt::Display for ResourcePath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.segments.is_empty() {
            return f.write_str("/");
        }
        for seg in &self.segments {
            write!(f, "/{seg}")?;
        }
        Ok(())
    }
}

impl Serialize for ResourcePath {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ResourcePath {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Policy {
    pub name: String,
    pub resource: ResourcePath,
    pub permissions: BTreeSet<Permission>,
}

impl Policy {
    pub fn grants(&self, permission: Permission, resource: &ResourcePath) -> bool {
        self.permissions.contains(&permission) && self.resource.covers(resource)
    }
}

/// An authenticated caller together with its resolved policies.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Principal {
    pub username: String,
    pub policies: Vec<Policy>,
    anonymous: bool,
}

impl Principal {
    pub fn anonymous() -> Principal {
        Principal {
            username: "anonymous".into(),
            policies: Vec::new(),
            anonymous: true,
        }
    }

    /// A principal holding exactly `policies`; used by embedders and tests.
    pub fn with_policies(username: impl Into<String>, policies: Vec<Policy>) -> Principal {
        Principal {
            username: username.into(),
            policies,
            anonymous: false,
        }
    }

    pub fn is_anonymous(&self) -> bool {
        self.anonymous
    }

    pub fn policy_names(&self) -> Vec<&str> {
        self.policies.iter().map(|p| p.name.as_str()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    Allow,
    Deny,
}

/// Allow iff one of the principal's policies carries `permission` on
/// `resource` or an ancestor of it.
pub fn authorize(principal: &Principal, permission: Permission, resource: &ResourcePath) -> Decision {
    if principal.policies.iter().any(|p| p.grants(permission, resource)) {
        Decision::Allow
    } else {
        Decision::Deny
    }
}

/// Like [`authorize`] but shaped for `?`: anonymous callers get
/// `Unauthenticated`, known ones `Forbidden`.
pub fn require(principal: &Principal, permission: Permission, resource: &ResourcePath) -> Result<()> {
    match authorize(principal, permission, resource) {
        Decision::Allow => Ok(()),
        Decision::Deny if principal.is_anonymous() => Err(Error::Unauthenticated),
        Decision::Deny => Err(Error::Forbidden(format!(
            "{} lacks {permission} on {resource}",
            principal.username
        ))),
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawUser {
    token: String,
    #[serde(default)]
    policies: Vec<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPolicy {
    resource: String,
    permissions: Vec<Permission>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPolicyConfig {
    #[serde(default)]
    users: BTreeMap<String, RawUser>,
    #[serde(default)]
    policies: BTreeMap<String, RawPolicy>,
}

/// Token table and policy set, immutable once loaded.
#[derive(Debug, Clone, Default)]
pub struct PolicyEngine {
    by_token: HashMap<String, Principal>,
}

impl PolicyEngine {
    pub fn from_yaml(text: &str) -> Result<PolicyEngine> {
        let raw: RawPolicyConfig =
            serde_yaml::from_str(text).map_err(|e| Error::Config(format!("policy config: {e}")))?;
        let mut policies = BTreeMap::new();
        for (name, p) in raw.policies {
            if p.permissions.is_empty() {
                return Err(Error::Config(format!("policy {name:?} grants no permissions")));
            }
            let policy = Policy {
                name: name.clone(),
                resource: p.resource.parse()?,
                permissions: p.permissions.into_iter().collect(),
            };
            policies.insert(name, policy);
        }
        let mut by_token = HashMap::new();
        for (username, user) in raw.users {
            let mut resolved = Vec::new();
            for name in &user.policies {
                let p = policies
                    .get(name)
                    .ok_or_else(|| Error::Config(format!("user {username:?} references unknown policy {name:?}")))?;
                resolved.push(p.clone());
            }
            let principal = Principal::with_policies(username.clone(), resolved);
            if by_token.insert(user.token.clone(), principal).is_some() {
                return Err(Error::Config(format!("token of user {username:?} is not unique")));
            }
        }
        Ok(PolicyEngine { by_token })
    }

    pub fn load(path: &Path) -> Result<PolicyEngine> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        PolicyEngine::from_yaml(&text)
    }

    /// `None` yields the anonymous principal; an unknown token is an error.
    pub fn authenticate(&self, token: Option<&str>) -> Result<Principal> {
        match token {
            None => Ok(Principal::anonymous()),
            Some(t) => self.by_token.get(t).cloned().ok_or(Error::Unauthenticated),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const CONFIG: &str = r#"
users:
  alice:
    token: tkn-alice
    policies: [open_reader]
  bob:
    token: tkn-bob
    policies: []
policies:
  open_reader:
    resource: /programs/open
    permissions: [read, read-storage]
"#;

    fn path(s: &str) -> ResourcePath {
        s.parse().unwrap()
    }

    fn policy(resource: &str, perms: &[Permission]) -> Policy {
        Policy {
            name: "p".into(),
            resource: path(resource),
            permissions: perms.iter().copied().collect(),
        }
    }

    #[test]
    fn authenticate_cases() {
        let engine = PolicyEngine::from_yaml(CONFIG).unwrap();
        let alice = engine.authenticate(Some("tkn-alice")).unwrap();
        assert_eq!(alice.username, "alice");
        assert_eq!(alice.policy_names(), vec!["open_reader"]);
        assert!(matches!(engine.authenticate(Some("nope")), Err(Error::Unauthenticated)));
        let anon = engine.authenticate(None).unwrap();
        assert!(anon.is_anonymous() && anon.policies.is_empty());
    }

    #[test]
    fn config_errors() {
        let bad = "users: {a: {token: t, policies: [ghost]}}\npolicies: {}\n";
        assert!(PolicyEngine::from_yaml(bad).is_err());
        let bad = "policies: {p: {resource: programs, permissions: [read]}}\n";
        assert!(PolicyEngine::from_yaml(bad).is_err());
        let bad = "policies: {p: {resource: /x, permissions: []}}\n";
        assert!(PolicyEngine::from_yaml(bad).is_err());
    }

    #[test]
    fn prefix_rule_examples() {
        let p = Principal::with_policies("u", vec![policy("/programs/open", &[Permission::Read])]);
        let a = path("/programs/open/projects/A");
        assert_eq!(authorize(&p, Permission::Read, &a), Decision::Allow);
        assert_eq!(authorize(&p, Permission::Create, &a), Decision::Deny);
        assert_eq!(
            authorize(&p, Permission::Read, &path("/programs/openX")),
            Decision::Deny
        );
        assert_eq!(authorize(&p, Permission::Read, &path("/programs")), Decision::Deny);
        let root = Principal::with_policies("admin", vec![policy("/", &Permission::ALL)]);
        assert_eq!(authorize(&root, Permission::Delete, &a), Decision::Allow);
    }

    #[test]
    fn require_distinguishes_anonymous() {
        let r = path("/services/index");
        assert!(matches!(
            require(&Principal::anonymous(), Permission::Read, &r),
            Err(Error::Unauthenticated)
        ));
        let p = Principal::with_policies("u", vec![]);
        assert!(matches!(require(&p, Permission::Read, &r), Err(Error::Forbidden(_))));
    }

    fn arb_path() -> impl Strategy<Value = String> {
        prop::collection::vec(prop_oneof![Just("a"), Just("ab"), Just("b"), Just("programs")], 0..4)
            .prop_map(|segs| format!("/{}", segs.join("/")))
    }

    fn arb_perm() -> impl Strategy<Value = Permission> {
        prop::sample::select(Permission::ALL.to_vec())
    }

    /// Oracle: split both paths on '/' and compare the leading segments.
    fn oracle(policy_path: &str, perms: &[Permission], perm: Permission, resource: &str) -> bool {
        let split = |s: &str| {
            s.split('/')
                .filter(|x| !x.is_empty())
                .map(str::to_owned)
                .collect::<Vec<_>>()
        };
        let (pp, rr) = (split(policy_path), split(resource));
        perms.contains(&perm) && pp.len() <= rr.len() && pp[..] == rr[..pp.len()]
    }

    proptest! {
        #[test]
        fn matches_segment_oracle(pp in arb_path(), rp in arb_path(), perms in prop::collection::vec(arb_perm(), 1..3), perm in arb_perm()) {
            let p = Principal::with_policies("u", vec![policy(&pp, &perms)]);
            let got = authorize(&p, perm, &path(&rp)) == Decision::Allow;
            prop_assert_eq!(got, oracle(&pp, &perms, perm, &rp));
        }

        #[test]
        fn deny_by_default(rp in arb_path()) {
            let p = Principal::with_policies("nobody", vec![]);
            for perm in Permission::ALL {
                prop_assert_eq!(authorize(&p, perm, &path(&rp)), Decision::Deny);
            }
        }

        #[test]
        fn adding_policies_is_monotone(
            a in arb_path(), b in arb_path(), rp in arb_path(),
            pa in prop::collection::vec(arb_perm(), 1..3), pb in prop::collection::vec(arb_perm(), 1..3),
            perm in arb_perm()
        ) {
            let one = Principal::with_policies("u", vec![policy(&a, &pa)]);
            let two = Principal::with_policies("u", vec![policy(&a, &pa), policy(&b, &pb)]);
            if authorize(&one, perm, &path(&rp)) == Decision::Allow {
                prop_assert_eq!(authorize(&two, perm, &path(&rp)), Decision::Allow);
            }
        }
    }
}

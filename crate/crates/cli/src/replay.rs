use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use clap::Args;

use crate::manifest::{load_manifest, sha256_file, MANIFEST_NAME};
use crate::{CliError, CliResult};

#[derive(Debug, Args)]
pub struct ReplayArgs {
    /// Manifest written by an earlier command (or its output directory).
    pub manifest: PathBuf,
    /// Where the re-run writes; defaults to `<original out>-replay`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn with_out(argv: &[String], out: &Path) -> CliResult<Vec<String>> {
    let mut replaced = false;
    let mut next_is_out = false;
    let argv: Vec<String> = argv
        .iter()
        .map(|a| {
            if next_is_out {
                next_is_out = false;
                replaced = true;
                return out.display().to_string();
            }
            if a == "--out" {
                next_is_out = true;
            } else if a.starts_with("--out=") {
                replaced = true;
                return format!("--out={}", out.display());
            }
            a.clone()
        })
        .collect();
    if !replaced {
        return Err(CliError::usage("manifest argv has no --out to redirect"));
    }
    Ok(argv)
}

pub fn run(args: ReplayArgs) -> CliResult {
    let path = if args.manifest.is_dir() {
        args.manifest.join(MANIFEST_NAME)
    } else {
        args.manifest.clone()
    };
    if !path.is_file() {
        return Err(CliError::usage(format!("manifest {} does not exist", path.display())));
    }
    let m = load_manifest(&path)?;
    if m.command == "replay" {
        return Err(CliError::usage("cannot replay a replay"));
    }
    let cwd = PathBuf::from(&m.cwd);
    for input in &m.inputs {
        let p = cwd.join(&input.path);
        let got = sha256_file(&p).with_context(|| format!("input {} is unavailable", p.display()))?;
        if got != input.sha256 {
            return Err(CliError::Runtime(anyhow!("input {} changed since the manifest was written", p.display())));
        }
    }

    let here = std::env::current_dir().context("reading working directory")?;
    let out = here.join(args.out.unwrap_or_else(|| PathBuf::from(format!("{}-replay", cwd.join(&m.out_dir).display()))));
    let argv = with_out(&m.argv, &out)?;
    std::env::set_current_dir(&cwd).with_context(|| format!("entering {}", cwd.display()))?;
    let code = crate::run(std::iter::once("ltood".to_string()).chain(argv));
    std::env::set_current_dir(&here).context("restoring working directory")?;
    if code != 0 {
        return Err(CliError::Runtime(anyhow!("replayed command exited with status {code}")));
    }

    let again = load_manifest(&out.join(MANIFEST_NAME))?;
    let mut mismatched = Vec::new();
    for o in &m.outputs {
        match again.outputs.iter().find(|a| a.path == o.path) {
            Some(a) if a.sha256 == o.sha256 => {}
            _ => mismatched.push(o.path.clone()),
        }
    }
    if again.outputs.len() != m.outputs.len() || !mismatched.is_empty() {
        return Err(CliError::Runtime(anyhow!(
            "replay differs from the manifest: {}",
            if mismatched.is_empty() { "output lists differ".to_string() } else { mismatched.join(", ") }
        )));
    }
    println!("reproduced {} outputs bit-for-bit in {}", m.outputs.len(), out.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn out_is_redirected() {
        let argv: Vec<String> = ["plot", "--input", "a.csv", "--out", "x"].map(String::from).to_vec();
        assert_eq!(with_out(&argv, Path::new("/y")).unwrap()[4], "/y");
        let eq: Vec<String> = ["plot", "--out=x"].map(String::from).to_vec();
        assert_eq!(with_out(&eq, Path::new("/y")).unwrap()[1], "--out=/y");
        assert!(with_out(&["plot".to_string()], Path::new("/y")).is_err());
    }
}

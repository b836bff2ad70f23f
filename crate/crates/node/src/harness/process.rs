//! Child service processes.

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::sync::mpsc;
use std::time::Duration;

use anyhow::{anyhow, bail, Context};

/// Locations of the service binaries.
#[derive(Debug, Clone)]
pub struct Binaries {
    pub pdc: PathBuf,
    pub coordinator: PathBuf,
    pub provider: PathBuf,
}

impl Binaries {
    pub fn in_dir(dir: &Path) -> Self {
        let exe = |n: &str| dir.join(format!("{n}{}", std::env::consts::EXE_SUFFIX));
        Binaries {
            pdc: exe("fedcap-pdc"),
            coordinator: exe("fedcap-coordinator"),
            provider: exe("fedcap-provider"),
        }
    }

    /// Binaries next to the running executable. Test executables live one
    /// level further down, in `deps/`.
    pub fn beside_current_exe() -> anyhow::Result<Self> {
        let exe = std::env::current_exe()?;
        let mut dir = exe
            .parent()
            .ok_or_else(|| anyhow!("executable has no directory"))?;
        if dir.ends_with("deps") {
            dir = dir.parent().unwrap_or(dir);
        }
        Ok(Self::in_dir(dir))
    }

    pub fn check(&self) -> anyhow::Result<()> {
        for b in [&self.pdc, &self.coordinator, &self.provider] {
            if !b.exists() {
                bail!(
                    "service binary {} not found; run `cargo build` first",
                    b.display()
                );
            }
        }
        Ok(())
    }
}

/// Reserves a loopback port by binding and releasing it.
pub fn free_port() -> anyhow::Result<u16> {
    Ok(TcpListener::bind("127.0.0.1:0")?.local_addr()?.port())
}

/// A running service. Killed on drop.
#[derive(Debug)]
pub struct ServiceProcess {
    pub name: String,
    pub addr: String,
    child: Child,
    log: PathBuf,
    suspended: bool,
}

impl ServiceProcess {
    /// Starts `bin` and waits for its `LISTENING <addr>` line.
    pub fn spawn(name: &str, bin: &Path, args: &[String], log_dir: &Path) -> anyhow::Result<Self> {
        let log = log_dir.join(format!("{name}.log"));
        let mut child = Command::new(bin)
            .args(args)
            .stdin(Stdio::null())
            .stdout(Stdio::piped())
            .stderr(Stdio::from(File::create(&log)?))
            .spawn()
            .with_context(|| format!("starting {}", bin.display()))?;
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, rx) = mpsc::channel();
        std::thread::spawn(move || {
            let mut lines = BufReader::new(stdout).lines();
            let first = lines.next();
            let _ = tx.send(first);
            // Keep draining so the child never blocks on a full pipe.
            for _ in lines {}
        });
        let line = match rx.recv_timeout(Duration::from_secs(15)) {
            Ok(Some(Ok(l))) => l,
            other => {
                let _ = child.kill();
                let _ = child.wait();
                let tail = std::fs::read_to_string(&log).unwrap_or_default();
                bail!("{name} did not announce its address ({other:?}); log:\n{tail}");
            }
        };
        let addr = line
            .strip_prefix("LISTENING ")
            .ok_or_else(|| anyhow!("{name}: unexpected first line {line:?}"))?
            .trim()
            .to_string();
        Ok(ServiceProcess {
            name: name.to_string(),
            addr,
            child,
            log,
            suspended: false,
        })
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn pid(&self) -> u32 {
        self.child.id()
    }

    pub fn log_path(&self) -> &Path {
        &self.log
    }

    fn signal(&self, sig: &str) -> anyhow::Result<()> {
        let status = Command::new("kill")
            .args([sig, &self.pid().to_string()])
            .status()
            .context("running kill")?;
        if !status.success() {
            bail!("kill {sig} {} failed", self.pid());
        }
        Ok(())
    }

    /// Freezes the process so that it accepts connections but never answers.
    pub fn suspend(&mut self) -> anyhow::Result<()> {
        self.signal("-STOP")?;
        self.suspended = true;
        Ok(())
    }

    pub fn resume(&mut self) -> anyhow::Result<()> {
        self.signal("-CONT")?;
        self.suspended = false;
        Ok(())
    }
}

impl Drop for ServiceProcess {
    fn drop(&mut self) {
        if self.suspended {
            let _ = self.resume();
        }
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

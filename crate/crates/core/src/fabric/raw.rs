//! Raw L2 socket adapter (Linux `AF_PACKET`).
//!
//! Gives real interfaces the same send/receive contract as the simulated
//! fabric, on the wall clock. One receive thread per interface hands frames
//! to the consumer over a channel. The kernel and NIC add and strip the
//! FCS, so frames are exchanged without one.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{sync_channel, Receiver, RecvTimeoutError};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use bytes::Bytes;
use thiserror::Error;

use crate::frame::{MacAddress, MAX_FRAME};

#[derive(Debug, Error)]
pub enum RawSocketError {
    #[error("no such interface `{0}`")]
    NoSuchInterface(String),
    #[error("raw sockets need CAP_NET_RAW: {0}")]
    PermissionDenied(std::io::Error),
    #[error("raw sockets are only supported on Linux")]
    Unsupported,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

const RX_QUEUE: usize = 65_536;
const POLL: Duration = Duration::from_millis(50);
/// Requested kernel receive buffer, bytes.
#[cfg(target_os = "linux")]
const RCVBUF: i32 = 16 << 20;

#[cfg(target_os = "linux")]
mod sys {
    use std::ffi::CString;
    use std::io;
    use std::os::fd::{AsRawFd, FromRawFd, OwnedFd};
    use std::time::Duration;

    use super::RawSocketError;

    const PACKET_OUTGOING: u8 = 4;

    pub struct Socket {
        fd: OwnedFd,
        ifindex: i32,
    }

    pub fn ifindex(name: &str) -> Result<i32, RawSocketError> {
        let c = CString::new(name).map_err(|_| RawSocketError::NoSuchInterface(name.into()))?;
        // SAFETY: `c` is a valid NUL-terminated string.
        let idx = unsafe { libc::if_nametoindex(c.as_ptr()) };
        if idx == 0 {
            return Err(RawSocketError::NoSuchInterface(name.into()));
        }
        Ok(idx as i32)
    }

    fn sockaddr(ifindex: i32) -> libc::sockaddr_ll {
        // SAFETY: sockaddr_ll is plain old data; all-zero is a valid value.
        let mut sa: libc::sockaddr_ll = unsafe { std::mem::zeroed() };
        sa.sll_family = libc::AF_PACKET as u16;
        sa.sll_protocol = (libc::ETH_P_ALL as u16).to_be();
        sa.sll_ifindex = ifindex;
        sa.sll_halen = 6;
        sa
    }

    impl Socket {
        pub fn open(name: &str) -> Result<Self, RawSocketError> {
            let ifindex = ifindex(name)?;
            // SAFETY: plain socket(2) call; the result is checked below.
            let fd = unsafe {
                libc::socket(
                    libc::AF_PACKET,
                    libc::SOCK_RAW,
                    (libc::ETH_P_ALL as u16).to_be() as i32,
                )
            };
            if fd < 0 {
                let e = io::Error::last_os_error();
                return Err(match e.raw_os_error() {
                    Some(libc::EPERM) | Some(libc::EACCES) => RawSocketError::PermissionDenied(e),
                    _ => RawSocketError::Io(e),
                });
            }
            // SAFETY: `fd` is a freshly created descriptor we own.
            let fd = unsafe { OwnedFd::from_raw_fd(fd) };
            let sa = sockaddr(ifindex);
            // SAFETY: `sa` is a valid sockaddr_ll and the length matches it.
            let rc = unsafe {
                libc::bind(
                    fd.as_raw_fd(),
                    &sa as *const libc::sockaddr_ll as *const libc::sockaddr,
                    std::mem::size_of::<libc::sockaddr_ll>() as u32,
                )
            };
            if rc < 0 {
                return Err(io::Error::last_os_error().into());
            }
            let s = Socket { fd, ifindex };
            s.set_timeout(super::POLL)?;
            // Bursts of full-size frames overrun the default buffer on `lo`.
            // The forced variant needs CAP_NET_ADMIN; the plain one is capped
            // by net.core.rmem_max.
            if s.set_int(libc::SO_RCVBUFFORCE, super::RCVBUF).is_err() {
                if let Err(e) = s.set_int(libc::SO_RCVBUF, super::RCVBUF) {
                    log::debug!("cannot enlarge receive buffer: {e}");
                }
            }
            Ok(s)
        }

        fn set_int(&self, opt: libc::c_int, value: libc::c_int) -> io::Result<()> {
            // SAFETY: `value` outlives the call and the length matches.
            let rc = unsafe {
                libc::setsockopt(
                    self.fd.as_raw_fd(),
                    libc::SOL_SOCKET,
                    opt,
                    &value as *const libc::c_int as *const libc::c_void,
                    std::mem::size_of::<libc::c_int>() as u32,
                )
            };
            if rc < 0 {
                return Err(io::Error::last_os_error());
            }
            Ok(())
        }

        fn set_timeout(&self, t: Duration) -> io::Result<()> {
            let tv = libc::timeval {
                tv_sec: t.as_secs() as libc::time_t,
                tv_usec: t.subsec_micros() as libc::suseconds_t,
            };
            // SAFETY: `tv` outlives the call and the length matches.
            let rc = unsafe {
                libc::setsockopt(
                    self.fd.as_raw_fd(),
                    libc::SOL_SOCKET,
                    libc::SO_RCVTIMEO,
                    &tv as *const libc::timeval as *const libc::c_void,
                    std::mem::size_of::<libc::timeval>() as u32,
                )
            };
            if rc < 0 {
                return Err(io::Error::last_os_error());
            }
            Ok(())
        }

        pub fn send(&self, frame: &[u8]) -> io::Result<()> {
            let mut sa = sockaddr(self.ifindex);
            sa.sll_addr[..6].copy_from_slice(&frame[..6]);
            // SAFETY: buffer and address are valid for the given lengths.
            let n = unsafe {
                libc::sendto(
                    self.fd.as_raw_fd(),
                    frame.as_ptr() as *const libc::c_void,
                    frame.len(),
                    0,
                    &sa as *const libc::sockaddr_ll as *const libc::sockaddr,
                    std::mem::size_of::<libc::sockaddr_ll>() as u32,
                )
            };
            if n < 0 {
                return Err(io::Error::last_os_error());
            }
            Ok(())
        }

        /// Receives one inbound frame. `Ok(None)` on timeout or for frames
        /// this host transmitted itself.
        pub fn recv(&self, buf: &mut [u8]) -> io::Result<Option<usize>> {
            // SAFETY: zeroed sockaddr_ll is valid; lengths match buffers.
            let mut sa: libc::sockaddr_ll = unsafe { std::mem::zeroed() };
            let mut len = std::mem::size_of::<libc::sockaddr_ll>() as u32;
            let n = unsafe {
                libc::recvfrom(
                    self.fd.as_raw_fd(),
                    buf.as_mut_ptr() as *mut libc::c_void,
                    buf.len(),
                    0,
                    &mut sa as *mut libc::sockaddr_ll as *mut libc::sockaddr,
                    &mut len,
                )
            };
            if n < 0 {
                let e = io::Error::last_os_error();
                return match e.kind() {
                    io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut | io::ErrorKind::Interrupted => {
                        Ok(None)
                    }
                    _ => Err(e),
                };
            }
            if sa.sll_pkttype == PACKET_OUTGOING {
                return Ok(None);
            }
            Ok(Some(n as usize))
        }
    }
}

#[cfg(not(target_os = "linux"))]
mod sys {
    use super::RawSocketError;

    pub struct Socket;

    pub fn ifindex(_name: &str) -> Result<i32, RawSocketError> {
        Err(RawSocketError::Unsupported)
    }

    impl Socket {
        pub fn open(_name: &str) -> Result<Self, RawSocketError> {
            Err(RawSocketError::Unsupported)
        }

        pub fn send(&self, _frame: &[u8]) -> std::io::Result<()> {
            unreachable!()
        }

        pub fn recv(&self, _buf: &mut [u8]) -> std::io::Result<Option<usize>> {
            unreachable!()
        }
    }
}

fn interface_mac(iface: &str) -> Option<MacAddress> {
    std::fs::read_to_string(format!("/sys/class/net/{iface}/address"))
        .ok()?
        .trim()
        .parse()
        .ok()
}

/// An open raw socket plus its receive thread.
pub struct RawLink {
    socket: Arc<sys::Socket>,
    rx: Receiver<Bytes>,
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<()>>,
    mac: MacAddress,
    started: Instant,
}

impl RawLink {
    /// Opens `iface`. The local MAC defaults to the interface address; pass
    /// `mac` to impersonate another station (needed on `lo`, whose address
    /// is all zeros).
    pub fn open(iface: &str, mac: Option<MacAddress>) -> Result<Self, RawSocketError> {
        sys::ifindex(iface)?;
        let socket = Arc::new(sys::Socket::open(iface)?);
        let mac = mac
            .or_else(|| interface_mac(iface))
            .unwrap_or(MacAddress::ZERO);
        let (tx, rx) = sync_channel(RX_QUEUE);
        let stop = Arc::new(AtomicBool::new(false));
        let thread = {
            let socket = socket.clone();
            let stop = stop.clone();
            std::thread::Builder::new()
                .name(format!("raw-rx-{iface}"))
                .spawn(move || {
                    let mut buf = vec![0u8; MAX_FRAME + 64];
                    while !stop.load(Ordering::Relaxed) {
                        match socket.recv(&mut buf) {
                            Ok(Some(n)) => {
                                if tx.send(Bytes::copy_from_slice(&buf[..n])).is_err() {
                                    break;
                                }
                            }
                            Ok(None) => {}
                            Err(e) => {
                                log::warn!("raw receive failed: {e}");
                                break;
                            }
                        }
                    }
                })?
        };
        Ok(RawLink {
            socket,
            rx,
            stop,
            thread: Some(thread),
            mac,
            started: Instant::now(),
        })
    }

    pub fn mac(&self) -> MacAddress {
        self.mac
    }

    /// Wall time since the link was opened.
    pub fn elapsed(&self) -> Duration {
        self.started.elapsed()
    }

    pub fn send(&self, frame: &[u8]) -> Result<(), RawSocketError> {
        Ok(self.socket.send(frame)?)
    }

    /// Waits up to `timeout` for the next inbound frame.
    pub fn recv_timeout(&self, timeout: Duration) -> Option<Bytes> {
        match self.rx.recv_timeout(timeout) {
            Ok(b) => Some(b),
            Err(RecvTimeoutError::Timeout) | Err(RecvTimeoutError::Disconnected) => None,
        }
    }
}

impl Drop for RawLink {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_interface() {
        match RawLink::open("nonexistent-if0", None) {
            Err(RawSocketError::NoSuchInterface(n)) => assert_eq!(n, "nonexistent-if0"),
            Err(RawSocketError::Unsupported) => {}
            other => panic!("unexpected {:?}", other.err()),
        }
    }
}

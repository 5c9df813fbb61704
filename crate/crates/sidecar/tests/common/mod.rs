// Copyright 2025 The webcoach Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#![allow(dead_code)]

pub mod fake_agent;

use std::net::SocketAddr;
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use tokio::sync::oneshot;
use webcoach_core::config::{MemoryMode, SidecarConfig};
use webcoach_core::session::Sidecar;
use webcoach_sidecar::{serve, SidecarClient};

/// A sidecar served on an ephemeral port from its own runtime thread.
pub struct Running {
    pub addr: SocketAddr,
    pub sidecar: Arc<Sidecar>,
    stop: Option<oneshot::Sender<()>>,
    thread: Option<JoinHandle<std::io::Result<()>>>,
}

impl Running {
    pub fn start(sidecar: Sidecar) -> Running {
        let sidecar = Arc::new(sidecar);
        let (stop, stopped) = oneshot::channel::<()>();
        let (ready_tx, ready_rx) = std::sync::mpsc::channel();
        let sc = Arc::clone(&sidecar);
        let thread = std::thread::spawn(move || {
            let rt = tokio::runtime::Builder::new_multi_thread().worker_threads(4).enable_all().build()?;
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await?;
                ready_tx.send(listener.local_addr()?).expect("test alive");
                serve(listener, sc, async {
                    let _ = stopped.await;
                })
                .await
            })
        });
        let addr = ready_rx.recv_timeout(Duration::from_secs(10)).expect("server started");
        Running { addr, sidecar, stop: Some(stop), thread: Some(thread) }
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn client(&self) -> SidecarClient {
        SidecarClient::new(&self.url(), Duration::from_secs(30))
    }

    pub fn shutdown(mut self) -> std::io::Result<()> {
        self.stop_inner()
    }

    fn stop_inner(&mut self) -> std::io::Result<()> {
        if let Some(s) = self.stop.take() {
            let _ = s.send(());
        }
        match self.thread.take() {
            Some(t) => t.join().expect("server thread"),
            None => Ok(()),
        }
    }
}

impl Drop for Running {
    fn drop(&mut self) {
        let _ = self.stop_inner();
    }
}

pub fn config(mode: MemoryMode) -> SidecarConfig {
    SidecarConfig { memory_mode: mode, embedding_dim: 256, exact_search: true, ..Default::default() }
}

/// A port nothing listens on.
pub fn dead_url() -> String {
    let l = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = l.local_addr().unwrap();
    drop(l);
    format!("http://{addr}")
}

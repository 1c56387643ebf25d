//! Binding the router to a socket, in the foreground or on a thread.

use std::net::SocketAddr;
use std::sync::{Arc, RwLock};
use std::thread::JoinHandle;
use std::time::Duration;

use panvas_core::Command;
use tokio::net::TcpListener;
use tokio::sync::oneshot;
use tracing::{info, warn};

use crate::api::{router, Shared};
use crate::service::{Recovery, Service, StartupError};
use crate::settings::{ClockMode, ServiceConfig};

async fn bind(addr: &str) -> Result<TcpListener, StartupError> {
    TcpListener::bind(addr).await.map_err(|source| StartupError::Bind { addr: addr.to_string(), source })
}

fn spawn_clock(app: Shared, config: &ServiceConfig) {
    if config.server.clock != ClockMode::Wall {
        return;
    }
    let period = Duration::from_secs(config.server.tick_seconds);
    tokio::spawn(async move {
        let mut interval = tokio::time::interval(period);
        interval.tick().await;
        loop {
            interval.tick().await;
            let Ok(mut svc) = app.write() else { break };
            if let Err(e) = svc.submit(Command::AdvanceClock { ticks: 1 }, None) {
                warn!(code = %e.code, "clock tick failed");
            }
        }
    });
}

async fn run(
    config: ServiceConfig,
    listener: TcpListener,
    service: Service,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    let app: Shared = Arc::new(RwLock::new(service));
    spawn_clock(app.clone(), &config);
    let result = axum::serve(listener, router(app.clone())).with_graceful_shutdown(shutdown).await;
    if let Ok(svc) = app.read() {
        if !svc.is_poisoned() {
            svc.snapshot();
        }
    }
    result
}

/// Runs until Ctrl-C.
pub async fn serve(config: ServiceConfig) -> anyhow::Result<()> {
    let service = Service::open(&config)?;
    let listener = bind(&config.server.listen).await?;
    info!(addr = %listener.local_addr()?, "listening");
    let shutdown = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    run(config, listener, service, shutdown).await?;
    Ok(())
}

/// A server running on its own thread and runtime; stops when dropped.
pub struct ServerHandle {
    pub addr: SocketAddr,
    pub admin_token: String,
    pub recovery: Recovery,
    stop: Option<oneshot::Sender<()>>,
    thread: Option<JoinHandle<()>>,
}

impl std::fmt::Debug for ServerHandle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ServerHandle").field("addr", &self.addr).finish_non_exhaustive()
    }
}

impl ServerHandle {
    pub fn base_url(&self) -> String {
        format!("http://{}/api/v1", self.addr)
    }

    pub fn stop(mut self) {
        self.shutdown();
    }

    fn shutdown(&mut self) {
        if let Some(stop) = self.stop.take() {
            let _ = stop.send(());
        }
        if let Some(thread) = self.thread.take() {
            let _ = thread.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.shutdown();
    }
}

/// Opens the service and serves it on a background thread. Startup errors
/// are returned before the thread detaches.
pub fn spawn(config: ServiceConfig) -> Result<ServerHandle, StartupError> {
    let service = Service::open(&config)?;
    let admin_token = service.admin_token().to_string();
    let recovery = service.recovery().clone();
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .worker_threads(2)
        .enable_all()
        .build()
        .map_err(|source| StartupError::Bind { addr: config.server.listen.clone(), source })?;
    let listener = runtime.block_on(bind(&config.server.listen))?;
    let addr = listener.local_addr().map_err(|source| StartupError::Bind { addr: config.server.listen.clone(), source })?;
    let (stop, stopped) = oneshot::channel::<()>();
    let thread = std::thread::spawn(move || {
        runtime.block_on(async move {
            let shutdown = async {
                let _ = stopped.await;
            };
            if let Err(e) = run(config, listener, service, shutdown).await {
                warn!(error = %e, "server stopped with an error");
            }
        });
    });
    Ok(ServerHandle { addr, admin_token, recovery, stop: Some(stop), thread: Some(thread) })
}

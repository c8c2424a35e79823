/** DOM bootstrap: hash routing, periodic refresh, checkpoint buttons. */

import { ApiClient } from "./api.js";
import { EventPoller } from "./events.js";
import { renderRunDetail, renderRunList } from "./view.js";

const client = new ApiClient("", localStorage.getItem("sddkit_token"));
const root = document.getElementById("app") as HTMLElement;
let poller: EventPoller | null = null;
let timer: number | undefined;

async function showList(): Promise<void> {
  poller = null;
  const runs = await client.listRuns();
  root.innerHTML = `<h2>Runs</h2>${renderRunList(runs)}`;
}

async function showRun(runId: string): Promise<void> {
  if (!poller || (poller as unknown as { runId: string }).runId !== runId) {
    poller = new EventPoller(client, runId);
  }
  const run = await client.getRun(runId);
  if (run.live) await poller.poll().catch(() => []);
  let plan: string | null = null;
  try {
    plan = await client.getArtifact(runId, "plan");
  } catch {
    plan = null;
  }
  root.innerHTML = renderRunDetail(run, poller.events, plan);
  root.querySelectorAll<HTMLButtonElement>(".checkpoint button").forEach((button) =>
    button.addEventListener("click", async () => {
      const decision = button.dataset.decision as "approve" | "reject";
      button.disabled = true;
      try {
        await client.decideCheckpoint(runId, decision);
      } finally {
        await refresh();
      }
    }),
  );
}

async function refresh(): Promise<void> {
  const hash = window.location.hash;
  const match = /^#run\/(.+)$/.exec(hash);
  try {
    if (match) await showRun(decodeURIComponent(match[1]));
    else await showList();
  } catch (err) {
    root.innerHTML = `<p class="error">${String(err)}</p>`;
  }
}

window.addEventListener("hashchange", refresh);
timer = window.setInterval(refresh, 2000);
void timer;
void refresh();

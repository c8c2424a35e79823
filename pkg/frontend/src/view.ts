/** Pure presentation logic: state objects in, HTML strings out.
 *  DOM wiring lives in main.ts so these stay testable without a browser. */

import { RunDetail, RunEvent, RunSummary } from "./api.js";

export function checkpointPending(run: {
  live?: boolean;
  checkpoint?: string | null;
}): boolean {
  return run.live === true && run.checkpoint === "pending_plan_review";
}

function esc(value: unknown): string {
  return String(value ?? "")
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

export function renderRunRow(run: RunSummary): string {
  const status = run.live ? `${esc(run.status)} (live)` : esc(run.status);
  const score =
    run.judge_composite == null ? "—" : run.judge_composite.toFixed(2);
  const flag = run.needs_review ? " ⚑" : "";
  return (
    `<tr data-run="${esc(run.run_id)}">` +
    `<td><a href="#run/${esc(run.run_id)}">${esc(run.run_id)}</a></td>` +
    `<td>${esc(run.task_id ?? "")}</td>` +
    `<td>${esc(run.config ?? "")}</td>` +
    `<td>${status}</td>` +
    `<td>${esc(run.outcome ?? "")}${esc(
      run.failure_category ? `: ${run.failure_category}` : "",
    )}</td>` +
    `<td>${score}${flag}</td>` +
    `</tr>`
  );
}

export function renderRunList(runs: RunSummary[]): string {
  const rows = runs.map(renderRunRow).join("");
  return (
    "<table><thead><tr>" +
    "<th>run</th><th>task</th><th>config</th><th>status</th>" +
    "<th>outcome</th><th>score</th>" +
    `</tr></thead><tbody>${rows}</tbody></table>`
  );
}

export function renderEvents(events: RunEvent[]): string {
  const items = events
    .map(
      (e) =>
        `<li><span class="seq">#${e.seq}</span> ${esc(e.kind)} ` +
        `<code>${esc(JSON.stringify(e.payload))}</code></li>`,
    )
    .join("");
  return `<ol class="events">${items}</ol>`;
}

/** Checkpoint controls render only while a plan review is actually pending;
 *  auto-approved runs never reach that state, so they never see buttons. */
export function renderCheckpointControls(run: RunDetail): string {
  if (!checkpointPending(run)) return "";
  return (
    `<div class="checkpoint" data-run="${esc(run.run_id)}">` +
    "<p>Plan is waiting for review.</p>" +
    '<button data-decision="approve">Approve plan</button>' +
    '<button data-decision="reject">Reject plan</button>' +
    "</div>"
  );
}

export function renderRunDetail(
  run: RunDetail,
  events: RunEvent[],
  plan: string | null,
): string {
  const fields = ["config", "status", "phase", "checkpoint"]
    .map((k) => `<dt>${k}</dt><dd>${esc(run[k] ?? "—")}</dd>`)
    .join("");
  const planBlock = plan
    ? `<h3>Plan</h3><pre class="artifact">${esc(plan)}</pre>`
    : "";
  return (
    `<h2>${esc(run.run_id)}</h2>` +
    `<dl>${fields}</dl>` +
    renderCheckpointControls(run) +
    planBlock +
    "<h3>Events</h3>" +
    renderEvents(events)
  );
}

/** Console bootstrap: list view by default, inspector on row click. */

import { AlertdClient } from "./api";
import { AlertList } from "./alertList";
import { SceneInspector } from "./inspector";
import { readFiltersFromUrl } from "./state";
import { Alert } from "./types";

export function boot(root: HTMLElement, apiBase = "", win: Window = window): AlertList {
  const client = new AlertdClient(apiBase);
  const listRoot = document.createElement("div");
  listRoot.className = "list-root";
  const inspectorRoot = document.createElement("div");
  inspectorRoot.className = "inspector-root";
  inspectorRoot.hidden = true;
  root.append(listRoot, inspectorRoot);

  const list = new AlertList(
    listRoot,
    client,
    {
      onOpen: (alert: Alert) => {
        listRoot.hidden = true;
        inspectorRoot.hidden = false;
        const inspector = new SceneInspector(inspectorRoot, client, alert, {
          onClose: () => {
            inspectorRoot.hidden = true;
            listRoot.hidden = false;
            void list.refresh();
          },
          onChanged: () => undefined,
        });
        void inspector.open();
      },
    },
    readFiltersFromUrl(win),
    win,
  );
  void list.refresh();
  return list;
}

declare global {
  interface Window {
    plumeviewerBoot?: typeof boot;
  }
}

if (typeof window !== "undefined") {
  window.plumeviewerBoot = boot;
  const mount = typeof document !== "undefined" ? document.getElementById("app") : null;
  if (mount) boot(mount);
}
